#include <csignal>

#include "grasp/cli.hpp"

int main(int argc, char** argv) {
  std::signal(SIGPIPE, SIG_IGN);
  return grasp::run_cli(argc, argv);
}
