// Serves a built-in model over the bridge protocol, on stdio (default) or TCP.
//
//   grasp-model-server --model conv --seed 42 --size 64x64x3
//   grasp-model-server --model identity --port 0      # prints the bound port

#include <csignal>
#include <cstdio>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "grasp/bridge.hpp"
#include "grasp/harness.hpp"

int main(int argc, char** argv) {
  std::signal(SIGPIPE, SIG_IGN);
  CLI::App app{"bridge server for the built-in models"};
  grasp::ModelSpec spec;
  std::string size = "64x64x3";
  int port = -1;
  bool once = false;
  app.add_option("--model", spec.name, "identity | affine | conv");
  app.add_option("--seed", spec.seed, "conv seed");
  app.add_option("--hidden", spec.hidden_channels, "conv hidden channels");
  app.add_option("--input-gain", spec.input_gain, "conv input gain");
  app.add_option("--gain", spec.gain, "affine gain");
  app.add_option("--bias", spec.bias, "affine bias");
  app.add_option("--size", size, "HxWxC");
  app.add_option("--port", port, "listen on 127.0.0.1:PORT instead of stdio (0 picks a port)");
  app.add_flag("--once", once, "exit after the first TCP client disconnects");
  CLI11_PARSE(app, argc, argv);

  try {
    unsigned h = 0, w = 0, c = 0;
    if (std::sscanf(size.c_str(), "%ux%ux%u", &h, &w, &c) != 3 || !h || !w || !c) {
      std::cerr << "bad --size '" << size << "'\n";
      return grasp::kExitConfig;
    }
    const auto model = grasp::make_builtin_model(spec, grasp::Shape{h, w, c});
    if (port < 0) {
      grasp::bridge::Channel ch(STDIN_FILENO, STDOUT_FILENO);
      grasp::bridge::serve(ch, *model);
      return 0;
    }
    grasp::bridge::TcpListener listener(static_cast<std::uint16_t>(port));
    std::cout << listener.port() << std::endl;
    do {
      grasp::bridge::Channel ch = listener.accept();
      if (once) {
        grasp::bridge::serve(ch, *model);
      } else {
        std::thread([c = std::move(ch), &model]() mutable { grasp::bridge::serve(c, *model); })
            .detach();
      }
    } while (!once);
  } catch (const grasp::ConfigError& e) {
    std::cerr << e.what() << '\n';
    return grasp::kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << e.what() << '\n';
    return 1;
  }
  return 0;
}
