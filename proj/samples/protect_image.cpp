// Protect one synthetic image against the built-in conv surrogate and print
// how far the manipulated output moved.

#include <cstdio>

#include "grasp/grasp.hpp"

int main() {
  using namespace grasp;
  const Shape shape{64, 64, 3};
  const ConvSurrogate model(shape);
  const ImageTensor x = synthetic_image(shape, 7);

  DefenseConfig cfg;  // epsilon 0.05, 20 iterations, kappa 10
  const DefenseResult r = generate_adversarial(model, x, cfg);

  const ImageMetrics m = measure_pair(model, x, r.x_adv, model.forward(x), r.x_adv);
  std::printf("output l2 %.5f (%s), psnr %.2f dB, ssim %.4f\n", m.l2_out,
              m.defense_success ? "disrupted" : "not disrupted", m.psnr_in, m.ssim_in);
  for (std::size_t t = 0; t < r.trace.records.size(); t += 5) {
    const auto& rec = r.trace.records[t];
    std::printf("  iter %2zu  mse %.4f  ssim %.5f  lf %.3e  linf %.4f\n", t, rec.mse, rec.ssim, rec.lf,
                rec.linf);
  }
}
