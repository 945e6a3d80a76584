#include <string>
#include <vector>

#include "coreppr/cli.hpp"

int main(int argc, char** argv) {
  return coreppr::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
