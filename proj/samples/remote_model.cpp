// Drive the defense through a model living in another process.
//
//   example_remote_model "exec:./grasp-model-server --model conv --size 32x32x3"

#include <cstdio>

#include "grasp/bridge.hpp"
#include "grasp/engine.hpp"
#include "grasp/metrics.hpp"
#include "grasp/synthetic.hpp"

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: %s ENDPOINT\n", argv[0]);
    return 2;
  }
  try {
    auto model = grasp::bridge::bridge_connect(argv[1]);
    const grasp::ImageTensor x = grasp::synthetic_image(model->input_dims(), 1);
    grasp::DefenseConfig cfg;
    cfg.iterations = 5;
    const auto r = grasp::generate_adversarial(*model, x, cfg);
    const auto m = grasp::measure_pair(*model, x, r.x_adv, model->forward(x), r.x_adv);
    std::printf("%s: output l2 %.5f, psnr %.2f dB\n", model->name().c_str(), m.l2_out, m.psnr_in);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
