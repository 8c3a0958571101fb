// Fits a planted batch, localizes one concept and applies a local edit.
#include <sntf/sntf.hpp>

#include <iostream>

int main() {
    using namespace sntf;

    auto [batch, truth] = plant({20, 16, 8, 8}, 4, 4, 0.01, 7);

    FitConfig cfg;
    cfg.appearance_rank = 4;
    cfg.parts_rank = 4;
    cfg.seed = 7;
    const FactorModel model = fit(batch, cfg);

    const auto score = recovery_score(model, truth);
    std::cout << "iterations      " << model.stats.iterations << "\n"
              << "relative error  " << relative_error(batch, model.appearance, model.parts) << "\n"
              << "A residual      " << orthogonality_residual(model.appearance) << "\n"
              << "subspace angle  " << score.appearance_angle << " rad\n"
              << "mean part IoU   " << score.mean_part_iou() << "\n\n";

    std::cout << "part assignment:\n";
    const auto labels = part_assignment(model.parts);
    for (std::size_t h = 0; h < 8; ++h) {
        for (std::size_t w = 0; w < 8; ++w) std::cout << ' ' << labels[h * 8 + w];
        std::cout << '\n';
    }

    const auto th = concept_threshold(batch, model.appearance, 0);
    std::cout << "\nconcept 0 threshold " << th.mean << "\n";

    EditSpec spec{1, model.parts.col(2), 5.0};
    const auto edited = edit_features(batch[0], model.appearance, spec);
    std::cout << "edit changed " << (edited.data() - batch[0].data()).norm() << " (Frobenius)\n";
}
