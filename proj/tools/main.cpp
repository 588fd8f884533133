#include <string>
#include <vector>

#include "prefopt/cli.hpp"

int main(int argc, char** argv) {
  return prefopt::run(std::vector<std::string>(argv + 1, argv + argc));
}
