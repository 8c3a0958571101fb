#include "cli.hpp"

#include <CLI11.hpp>
#include <sntf/sntf.hpp>

#include <filesystem>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace sntf::cli {
namespace {

namespace fs = std::filesystem;
using io::format_double;

struct SynthArgs {
    fs::path out;
    std::size_t samples = 20, channels = 16, height = 8, width = 8;
    std::size_t rank_c = 4, rank_s = 4;
    double noise = 0.0;
    std::uint64_t seed = 0;
};

struct DecomposeArgs {
    fs::path input, out;
    FitConfig fit;
    std::optional<std::size_t> minibatch;
    bool unconstrained = false;
    bool closed_form = false;
    std::string step_rule = "backtracking";
};

struct RefineArgs {
    fs::path input, model, out;
    std::size_t sample = 0;
    RefineConfig cfg;
    std::string step_rule = "backtracking";
};

struct SaliencyArgs {
    fs::path input, model, out;
    std::size_t concept_index = 0;
    bool normalize = false;
};

struct EditArgs {
    fs::path input, model, out, spec, part_file, mask;
    std::optional<std::size_t> part_index, appearance, sample;
    std::optional<double> alpha;
    std::string norm = "max";
};

struct RoirArgs {
    fs::path original, edited, mask, out, mse_out;
};

struct InspectArgs {
    fs::path model, truth, out;
};

ImageBatch load_images(const fs::path& path) {
    const auto arr = npy::read_array(path);
    if (arr.ndim() == 3) return as_images(io::read_batch(path));
    if (arr.ndim() != 4)
        throw DataError(path.string() + ": expected N x C x S activations or N x H x W x C images");
    ImageBatch img;
    img.count = arr.shape[0];
    img.height = arr.shape[1];
    img.width = arr.shape[2];
    img.channels = arr.shape[3];
    img.values = arr.values;
    return img;
}

void check_model_matches(const FactorModel& model, const ActivationBatch& batch) {
    if (static_cast<std::size_t>(model.appearance.rows()) != batch.channels() ||
        !(model.dims == batch.dims()))
        throw DataError("model dimensions (C=" + std::to_string(model.appearance.rows()) + ", " +
                        std::to_string(model.dims.height) + "x" + std::to_string(model.dims.width) +
                        ") do not match the batch (C=" + std::to_string(batch.channels()) + ", " +
                        std::to_string(batch.dims().height) + "x" +
                        std::to_string(batch.dims().width) + ")");
}

std::string join(const Vector& v) {
    std::string s;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (i) s += ",";
        s += format_double(v(i));
    }
    return s;
}

void cmd_synth(const SynthArgs& a, std::ostream& out) {
    auto [batch, truth] =
        plant({a.samples, a.channels, a.height, a.width}, a.rank_c, a.rank_s, a.noise, a.seed);
    fs::create_directories(a.out);
    io::write_batch(a.out / "batch.npy", batch);
    io::save_truth(truth, a.out / "truth");
    out << "wrote " << (a.out / "batch.npy").generic_string() << " N=" << batch.size()
        << " C=" << batch.channels() << " H=" << a.height << " W=" << a.width << "\n";
    out << "wrote " << (a.out / "truth").generic_string() << " R_C=" << a.rank_c
        << " R_S=" << a.rank_s << " noise=" << format_double(a.noise) << "\n";
}

void cmd_decompose(DecomposeArgs a, std::ostream& out) {
    const auto batch = io::read_batch(a.input);
    a.fit.minibatch = a.minibatch;
    a.fit.nonneg = !a.unconstrained;
    a.fit.step_rule = parse_step_rule(a.step_rule);
    validate(a.fit, batch);  // before anything touches the output directory

    auto model = fit(batch, a.fit);
    if (a.closed_form) {
        model.appearance = closed_form_appearance(batch, model.parts, a.fit.appearance_rank);
        model.stats.final_loss = loss(batch, model.appearance, model.parts);
    }
    io::save_model(model, a.out);
    out << "iterations=" << model.stats.iterations << "\n";
    out << "final_loss=" << format_double(model.stats.final_loss) << "\n";
    out << "relative_error=" << format_double(relative_error(batch, model.appearance, model.parts))
        << "\n";
    out << "wrote " << a.out.generic_string() << "\n";
}

void cmd_refine(RefineArgs a, std::ostream& out) {
    const auto batch = io::read_batch(a.input);
    const auto model = io::load_model(a.model);
    check_model_matches(model, batch);
    if (a.sample >= batch.size())
        throw UsageError("--sample " + std::to_string(a.sample) + " out of range [0, " +
                         std::to_string(batch.size()) + ")");
    a.cfg.step_rule = parse_step_rule(a.step_rule);
    const auto r = refine_parts(batch[a.sample], a.sample, model.appearance, model.parts, a.cfg);
    if (!a.out.empty()) {
        if (a.out.has_parent_path()) fs::create_directories(a.out.parent_path());
        io::write_matrix(a.out, r.parts);
    }
    out << "sample=" << r.sample_index << "\n";
    out << "iterations=" << r.iterations_run << "\n";
    out << "initial_loss=" << format_double(r.initial_loss) << "\n";
    out << "final_loss=" << format_double(r.final_loss) << "\n";
}

void cmd_saliency(const SaliencyArgs& a, std::ostream& out) {
    const auto batch = io::read_batch(a.input);
    const auto model = io::load_model(a.model);
    check_model_matches(model, batch);
    if (a.concept_index >= model.appearance_rank())
        throw UsageError("--concept " + std::to_string(a.concept_index) + " out of range [0, " +
                         std::to_string(model.appearance_rank()) + ")");
    const auto th = concept_threshold(batch, model.appearance, a.concept_index);
    const auto dims = batch.dims();
    const std::size_t n = batch.size(), s = batch.spatial();
    std::vector<double> maps, masks;
    maps.reserve(n * s);
    masks.reserve(n * s);
    std::size_t on = 0;
    for (std::size_t i = 0; i < n; ++i) {
        Vector v = saliency(batch[i], model.appearance, a.concept_index, i).values;
        if (a.normalize) {
            const double lo = v.minCoeff(), hi = v.maxCoeff();
            v = hi > lo ? Vector((v.array() - lo) / (hi - lo)) : Vector(Vector::Zero(v.size()));
        }
        maps.insert(maps.end(), v.data(), v.data() + v.size());
        for (bool b : th.masks[i].bits) {
            masks.push_back(b ? 1.0 : 0.0);
            on += b ? 1 : 0;
        }
    }
    fs::create_directories(a.out);
    npy::write_array(a.out / "saliency.npy", {n, dims.height, dims.width}, maps);
    npy::write_array(a.out / "masks.npy", {n, dims.height, dims.width}, masks, npy::Dtype::u1);
    nlohmann::json meta = {{"format_version", io::format_version},
                           {"concept", a.concept_index},
                           {"threshold", th.mean},
                           {"normalized", a.normalize},
                           {"mask_fraction", static_cast<double>(on) / static_cast<double>(n * s)}};
    io::write_text(a.out / "saliency.json", meta.dump(2) + "\n");
    out << "concept=" << a.concept_index << "\n";
    out << "threshold=" << format_double(th.mean) << "\n";
    out << "mask_fraction=" << format_double(static_cast<double>(on) / static_cast<double>(n * s))
        << "\n";
    out << "wrote " << a.out.generic_string() << "\n";
}

void cmd_edit(const EditArgs& a, std::ostream& out) {
    const auto batch = io::read_batch(a.input);
    const auto model = io::load_model(a.model);
    check_model_matches(model, batch);
    const auto dims = batch.dims();

    EditSpec spec;
    if (!a.spec.empty()) {
        if (a.appearance || a.alpha || a.part_index || !a.part_file.empty())
            throw UsageError("--spec cannot be combined with --appearance/--alpha/--part/--part-file");
        spec = io::load_edit_spec(a.spec, dims);
    } else {
        if (!a.appearance || !a.alpha)
            throw UsageError("edit needs --spec, or --appearance and --alpha with --part or --part-file");
        if (a.part_index.has_value() == !a.part_file.empty())
            throw UsageError("give exactly one of --part or --part-file");
        spec.appearance_index = *a.appearance;
        spec.alpha = *a.alpha;
        if (a.norm == "max")
            spec.norm = PartNorm::max;
        else if (a.norm == "l2")
            spec.norm = PartNorm::l2;
        else
            throw UsageError("--norm must be max or l2");
        if (a.part_index) {
            if (*a.part_index >= model.parts_rank())
                throw UsageError("--part " + std::to_string(*a.part_index) + " out of range [0, " +
                                 std::to_string(model.parts_rank()) + ")");
            spec.part = model.parts.col(static_cast<Eigen::Index>(*a.part_index));
        } else {
            spec.part = io::read_spatial_vector(a.part_file, dims);
        }
    }
    if (spec.appearance_index >= model.appearance_rank())
        throw UsageError("appearance index " + std::to_string(spec.appearance_index) +
                         " out of range [0, " + std::to_string(model.appearance_rank()) + ")");
    if (!a.mask.empty()) spec.part = mask_part(spec.part, io::read_spatial_vector(a.mask, dims));
    if (a.sample && *a.sample >= batch.size())
        throw UsageError("--sample " + std::to_string(*a.sample) + " out of range [0, " +
                         std::to_string(batch.size()) + ")");

    std::vector<ActivationSample> edited;
    edited.reserve(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        if (a.sample && *a.sample != i)
            edited.push_back(batch[i]);
        else
            edited.push_back(edit_features(batch[i], model.appearance, spec));
    }
    if (a.out.has_parent_path()) fs::create_directories(a.out.parent_path());
    io::write_batch(a.out, ActivationBatch(std::move(edited)));
    out << "appearance=" << spec.appearance_index << "\n";
    out << "alpha=" << format_double(spec.alpha) << "\n";
    out << "edited_samples=" << (a.sample ? 1 : batch.size()) << "\n";
    out << "wrote " << a.out.generic_string() << "\n";
}

void cmd_roir(const RoirArgs& a, std::ostream& out) {
    const auto x = load_images(a.original);
    const auto y = load_images(a.edited);
    const auto m = npy::read_array(a.mask);
    if (m.ndim() != 2)
        throw DataError(a.mask.string() + ": expected an H x W mask");
    const RoiMask mask(m.shape[0], m.shape[1], m.values);
    const auto r = roir(mask, x, y);

    std::ostringstream rec;
    rec << "index,ratio\n";
    for (const auto& s : r.samples) rec << s.index << "," << format_double(s.ratio) << "\n";
    for (auto i : r.excluded) rec << i << ",excluded\n";
    rec << "mean ± std: " << format_double(r.mean) << " ± " << format_double(r.stddev) << "\n";
    rec << "samples=" << r.samples.size() << " excluded=" << r.excluded.size() << "\n";
    if (!a.out.empty()) io::write_text(a.out, rec.str());
    if (!a.mse_out.empty()) {
        const auto maps = mse_map(x, y);
        std::vector<double> v;
        for (const auto& mm : maps)
            for (Eigen::Index h = 0; h < mm.rows(); ++h)
                for (Eigen::Index w = 0; w < mm.cols(); ++w) v.push_back(mm(h, w));
        npy::write_array(a.mse_out, {x.count, x.height, x.width}, v);
    }
    out << rec.str();
}

void cmd_inspect(const InspectArgs& a, std::ostream& out) {
    const auto model = io::load_model(a.model);
    const double orth = orthogonality_residual(model.appearance);
    const Vector sparsity = part_sparsity(model.parts);
    const auto labels = part_assignment(model.parts);

    nlohmann::json report = {{"format_version", io::format_version},
                             {"orthogonality_residual", orth},
                             {"part_sparsity", std::vector<double>(sparsity.data(), sparsity.data() + sparsity.size())},
                             {"mean_part_sparsity", sparsity.mean()},
                             {"part_assignment", labels},
                             {"min_part_entry", model.parts.minCoeff()}};
    out << "orthogonality_residual=" << format_double(orth) << "\n";
    out << "part_sparsity=" << join(sparsity) << "\n";
    out << "mean_part_sparsity=" << format_double(sparsity.mean()) << "\n";
    out << "min_part_entry=" << format_double(model.parts.minCoeff()) << "\n";
    out << "part_assignment:\n";
    for (std::size_t h = 0; h < model.dims.height; ++h) {
        for (std::size_t w = 0; w < model.dims.width; ++w)
            out << (w ? " " : "  ") << labels[h * model.dims.width + w];
        out << "\n";
    }
    if (!a.truth.empty()) {
        const auto truth = io::load_truth(a.truth);
        const auto score = recovery_score(model, truth);
        report["appearance_angle"] = score.appearance_angle;
        report["part_iou"] = score.part_iou;
        report["mean_part_iou"] = score.mean_part_iou();
        out << "appearance_angle=" << format_double(score.appearance_angle) << "\n";
        out << "part_iou=" << join(Eigen::Map<const Vector>(score.part_iou.data(),
                                                           static_cast<Eigen::Index>(score.part_iou.size())))
            << "\n";
        out << "mean_part_iou=" << format_double(score.mean_part_iou()) << "\n";
    }
    if (!a.out.empty()) io::write_text(a.out, report.dump(2) + "\n");
}

std::string one_line(std::string s) {
    for (char& c : s)
        if (c == '\n' || c == '\r') c = ' ';
    return s;
}

} // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Semi-nonnegative factorization of feature maps into parts and appearances"};
    app.set_config("--config", "", "Optional key-value config file; flags take precedence");
    app.require_subcommand(1);

    SynthArgs synth;
    auto* s = app.add_subcommand("synth", "Write a planted batch and its ground truth");
    s->add_option("--out", synth.out, "Output directory")->required();
    s->add_option("--samples", synth.samples, "N")->capture_default_str();
    s->add_option("--channels", synth.channels, "C")->capture_default_str();
    s->add_option("--height", synth.height, "H")->capture_default_str();
    s->add_option("--width", synth.width, "W")->capture_default_str();
    s->add_option("--rank-c", synth.rank_c, "Appearance rank R_C")->capture_default_str();
    s->add_option("--rank-s", synth.rank_s, "Parts rank R_S")->capture_default_str();
    s->add_option("--noise", synth.noise, "Gaussian noise std")->capture_default_str();
    s->add_option("--seed", synth.seed)->capture_default_str();

    DecomposeArgs dec;
    auto* d = app.add_subcommand("decompose", "Fit appearance and parts factors");
    d->add_option("--input", dec.input, "Batch .npy (N x C x S) with .json sidecar")->required();
    d->add_option("--out", dec.out, "Model directory")->required();
    d->add_option("--rank-c", dec.fit.appearance_rank)->required();
    d->add_option("--rank-s", dec.fit.parts_rank)->required();
    d->add_option("--iterations", dec.fit.iterations)->capture_default_str();
    d->add_option("--lr", dec.fit.learning_rate, "Step size (initial step when backtracking)")
        ->capture_default_str();
    d->add_option("--minibatch", dec.minibatch, "Samples drawn per iteration");
    d->add_option("--seed", dec.fit.seed)->capture_default_str();
    d->add_option("--tol", dec.fit.convergence_tol)->capture_default_str();
    d->add_option("--step-rule", dec.step_rule, "fixed|backtracking")->capture_default_str();
    d->add_flag("--unconstrained", dec.unconstrained, "Drop the nonnegativity projection on P");
    d->add_flag("--closed-form", dec.closed_form, "Replace A by the closed-form solution after fitting");

    RefineArgs ref;
    auto* r = app.add_subcommand("refine", "Specialize the parts factors to one sample");
    r->add_option("--input", ref.input)->required();
    r->add_option("--model", ref.model)->required();
    r->add_option("--sample", ref.sample)->capture_default_str();
    r->add_option("--iterations", ref.cfg.iterations)->capture_default_str();
    r->add_option("--lr", ref.cfg.learning_rate)->capture_default_str();
    r->add_option("--step-rule", ref.step_rule)->capture_default_str();
    r->add_option("--out", ref.out, "Refined parts .npy (S x R_S)");

    SaliencyArgs sal;
    auto* sa = app.add_subcommand("saliency", "Saliency maps and mean-threshold masks for one concept");
    sa->add_option("--input", sal.input)->required();
    sa->add_option("--model", sal.model)->required();
    sa->add_option("--concept", sal.concept_index)->required();
    sa->add_option("--out", sal.out, "Output directory")->required();
    sa->add_flag("--normalize", sal.normalize, "Min-max normalize exported maps per sample");

    EditArgs ed;
    auto* e = app.add_subcommand("edit", "Apply a rank-one appearance edit at a part");
    e->add_option("--input", ed.input)->required();
    e->add_option("--model", ed.model)->required();
    e->add_option("--out", ed.out, "Edited batch .npy")->required();
    e->add_option("--spec", ed.spec, "Edit record (.json)");
    e->add_option("--appearance", ed.appearance);
    e->add_option("--alpha", ed.alpha);
    e->add_option("--part", ed.part_index, "Learned part column");
    e->add_option("--part-file", ed.part_file, "Part .npy (S or H x W)");
    e->add_option("--mask", ed.mask, "Spatial mask .npy multiplied into the part");
    e->add_option("--sample", ed.sample, "Edit only this sample");
    e->add_option("--norm", ed.norm, "Part normalization: max|l2")->capture_default_str();

    RoirArgs ro;
    auto* ri = app.add_subcommand("roir", "Region-of-interest ratio over paired batches");
    ri->add_option("--original", ro.original)->required();
    ri->add_option("--edited", ro.edited)->required();
    ri->add_option("--mask", ro.mask, "H x W mask in [0, 1]")->required();
    ri->add_option("--out", ro.out, "Write the records to this file as well");
    ri->add_option("--mse-out", ro.mse_out, "Per-pixel MSE maps .npy (N x H x W)");

    InspectArgs ins;
    auto* in = app.add_subcommand("inspect", "Factor diagnostics");
    in->add_option("--model", ins.model)->required();
    in->add_option("--truth", ins.truth, "Planted truth directory for recovery scoring");
    in->add_option("--out", ins.out, "Report .json");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return ExitCode::ok;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return ExitCode::ok;
    } catch (const CLI::ParseError& ex) {
        err << "error: usage: " << one_line(ex.what()) << "\n";
        return ExitCode::usage;
    }

    try {
        if (s->parsed()) cmd_synth(synth, out);
        else if (d->parsed()) cmd_decompose(dec, out);
        else if (r->parsed()) cmd_refine(ref, out);
        else if (sa->parsed()) cmd_saliency(sal, out);
        else if (e->parsed()) cmd_edit(ed, out);
        else if (ri->parsed()) cmd_roir(ro, out);
        else if (in->parsed()) cmd_inspect(ins, out);
    } catch (const UsageError& ex) {
        err << "error: usage: " << one_line(ex.what()) << "\n";
        return ExitCode::usage;
    } catch (const NumericalError& ex) {
        err << "error: numerical: " << one_line(ex.what()) << "\n";
        return ExitCode::numerical;
    } catch (const DataError& ex) {
        err << "error: data: " << one_line(ex.what()) << "\n";
        return ExitCode::data;
    } catch (const std::filesystem::filesystem_error& ex) {
        err << "error: data: " << one_line(ex.what()) << "\n";
        return ExitCode::data;
    }
    return ExitCode::ok;
}

} // namespace sntf::cli
