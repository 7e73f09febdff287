#include "savt/cli.hpp"

int main(int argc, char** argv) {
  return savt::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
