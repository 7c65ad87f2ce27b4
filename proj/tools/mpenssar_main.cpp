#include <string>
#include <vector>

#include "mpenssar/cli.hpp"

int main(int argc, char** argv) {
  return mpenssar::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
