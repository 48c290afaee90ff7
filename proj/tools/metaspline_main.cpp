#include <string>
#include <vector>

#include "metaspline/cli.hpp"

int main(int argc, char** argv) {
  return metaspline::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
