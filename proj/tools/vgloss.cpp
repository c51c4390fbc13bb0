// SPDX-License-Identifier: Apache-2.0
//
// vgloss: batch command-line front end.
//
// Exit codes: 0 success, 1 validation or check failure, 2 numerical abort, 64 usage error.

#include <cstdio>
#include <exception>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "vgloss/vgloss.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitNumerical = 2;
constexpr int kExitUsage = 64;

struct LossFlags {
    std::string grounding = "klsem";
    std::string refinement = "ciousem";
    double eta = 0.3;
    double lambda = 1.0;
    bool ciou_v_unsquared = false;

    void add_to(CLI::App* cmd) {
        cmd->add_option("--grounding", grounding, "Grounding loss")
            ->check(CLI::IsMember({"ce", "kl", "klsem"}))
            ->capture_default_str();
        cmd->add_option("--refinement", refinement, "Refinement loss")
            ->check(CLI::IsMember({"smoothl1", "ciousem"}))
            ->capture_default_str();
        cmd->add_option("--eta", eta, "IoU threshold for target masking")->check(CLI::Range(0.0, 1.0))->capture_default_str();
        cmd->add_option("--lambda", lambda, "Refinement loss weight")->check(CLI::NonNegativeNumber)->capture_default_str();
        cmd->add_flag("--ciou-v-unsquared", ciou_v_unsquared, "Aspect term without the square on the arctan difference");
    }

    vgloss::LossConfig config() const {
        vgloss::LossConfig c;
        c.grounding = vgloss::parse_grounding_kind(grounding);
        c.refinement = vgloss::parse_refinement_kind(refinement);
        c.eta = eta;
        c.lambda = lambda;
        c.ciou.v_unsquared = ciou_v_unsquared;
        return c;
    }
};

struct GenFlags {
    std::string out;
    vgloss::SynthConfig synth;
};

struct TrainFlags {
    std::string data;
    LossFlags loss;
    std::size_t epochs = 9;
    double lr = 1e-3;
    double decay = 0.9;
    std::uint64_t seed = 7;
    std::size_t hidden = 64;
    std::size_t batch_size = 1;
    std::string metrics_out;
    std::string ckpt_out;
    std::string preds_out;
};

struct AblateFlags {
    std::string data;
    std::string out;
    std::size_t epochs = 9;
    double lr = 1e-3;
    double decay = 0.9;
    std::uint64_t seed = 7;
    std::size_t hidden = 64;
    std::vector<std::string> groundings{"ce", "kl", "klsem"};
    std::vector<std::string> refinements{"smoothl1", "ciousem"};
    std::vector<double> etas{0.3, 0.4, 0.5};
    std::vector<double> lambdas{0.8, 1.0, 1.4};
};

struct EvalFlags {
    std::string data;
    std::string preds;
};

struct LossCmdFlags {
    std::string data;
    std::string ckpt;
    LossFlags loss;
};

struct GradcheckFlags {
    std::uint64_t seed = 7;
    std::size_t trials = 100;
};

int run_gen(const GenFlags& f) {
    const auto data = vgloss::gen_synthetic(f.synth);
    vgloss::write_examples(data, f.out);
    std::cerr << "wrote " << data.size() << " examples to " << f.out << '\n';
    return kExitOk;
}

vgloss::TrainConfig train_config(const TrainFlags& f) {
    vgloss::TrainConfig c;
    c.loss = f.loss.config();
    c.epochs = f.epochs;
    c.lr0 = f.lr;
    c.decay = f.decay;
    c.seed = f.seed;
    c.hidden = f.hidden;
    c.batch_size = f.batch_size;
    return c;
}

int run_train(const TrainFlags& f) {
    const auto data = vgloss::read_examples(f.data);
    const auto cfg = train_config(f);
    const auto res = vgloss::train(data, cfg, [](const vgloss::EpochMetrics& m) {
        std::fprintf(stderr, "epoch %zu  train_loss %.6f  val_acc %.4f  val_pointgame %.4f\n", m.epoch,
                     m.train_loss, m.val_accuracy, m.val_pointgame);
    });
    if (!f.metrics_out.empty())
        vgloss::write_metrics_csv(res.history, f.metrics_out);
    if (!f.ckpt_out.empty())
        vgloss::save_checkpoint(res.params, f.ckpt_out);
    if (!f.preds_out.empty())
        vgloss::write_predictions(vgloss::predict(data, res.params), f.preds_out);
    return kExitOk;
}

int run_ablate(const AblateFlags& f) {
    const auto data = vgloss::read_examples(f.data);
    vgloss::TrainConfig base;
    base.epochs = f.epochs;
    base.lr0 = f.lr;
    base.decay = f.decay;
    base.seed = f.seed;
    base.hidden = f.hidden;
    vgloss::AblationGrid grid;
    grid.groundings.clear();
    grid.refinements.clear();
    for (const auto& g : f.groundings)
        grid.groundings.push_back(vgloss::parse_grounding_kind(g));
    for (const auto& r : f.refinements)
        grid.refinements.push_back(vgloss::parse_refinement_kind(r));
    grid.etas = f.etas;
    grid.lambdas = f.lambdas;

    std::size_t done = 0;
    const auto rows = vgloss::ablate(data, base, grid, [&](const vgloss::AblationRow& r) {
        std::fprintf(stderr, "[%zu/%zu] %s %s eta=%g lambda=%g  val %.4f  test %.4f\n", ++done, grid.cells(),
                     std::string(vgloss::to_string(r.grounding)).c_str(),
                     std::string(vgloss::to_string(r.refinement)).c_str(), r.eta, r.lambda, r.val_acc, r.test_acc);
    });
    vgloss::write_ablation_csv(rows, f.out);

    // Report, without judging, how the refinement losses compare on this data.
    double sum[2] = {0, 0};
    std::size_t n[2] = {0, 0};
    for (const auto& r : rows) {
        const int i = r.refinement == vgloss::RefinementKind::ciou_sem ? 1 : 0;
        sum[i] += r.val_acc;
        ++n[i];
    }
    if (n[0] && n[1])
        std::printf("mean val accuracy: smoothl1 %.4f, ciousem %.4f (difference %+.4f)\n", sum[0] / n[0],
                    sum[1] / n[1], sum[1] / n[1] - sum[0] / n[0]);
    return kExitOk;
}

int run_eval(const EvalFlags& f) {
    const auto data = vgloss::read_examples(f.data);
    const auto preds = vgloss::read_predictions(f.preds);
    const auto rep = vgloss::evaluate_predictions(data, preds);
    const nlohmann::json j{{"accuracy", rep.accuracy},
                           {"point_game_accuracy", rep.point_game_accuracy},
                           {"n_queries", rep.n_queries}};
    std::cout << j.dump() << '\n';
    return kExitOk;
}

int run_loss(const LossCmdFlags& f) {
    const auto data = vgloss::read_examples(f.data);
    const auto params = vgloss::load_checkpoint(f.ckpt);
    const auto dims = vgloss::dataset_dims(data);
    if (dims.text != params.config.text_dim || dims.visual != params.config.visual_dim)
        throw vgloss::SchemaError("checkpoint expects text/visual widths " + std::to_string(params.config.text_dim) +
                                  "/" + std::to_string(params.config.visual_dim) + ", data has " +
                                  std::to_string(dims.text) + "/" + std::to_string(dims.visual));
    const auto cfg = f.loss.config();
    cfg.validate();

    nlohmann::json per_example = nlohmann::json::array();
    double sum_g = 0, sum_c = 0, sum_t = 0;
    std::size_t n = 0, fallbacks = 0, queries = 0;
    for (const auto& ex : data) {
        if (ex.queries.empty())
            continue;
        const auto prep = vgloss::prepare(ex, params.config);
        const auto sup = vgloss::supervise(prep, cfg);
        const auto pass = vgloss::forward(prep, params);
        const auto loss = vgloss::example_loss(cfg, prep, sup, pass);
        const auto& bundles = cfg.grounding == vgloss::GroundingKind::kl ? sup.plain : sup.semantic;
        std::size_t fb = 0;
        for (const auto& b : bundles)
            fb += b.fallback_used;
        per_example.push_back({{"image_id", ex.image_id},
                               {"L_g", loss.out.grounding_value},
                               {"L_c", loss.out.refinement_value},
                               {"L", loss.out.total},
                               {"fallback_queries", fb}});
        sum_g += loss.out.grounding_value;
        sum_c += loss.out.refinement_value;
        sum_t += loss.out.total;
        fallbacks += fb;
        queries += ex.queries.size();
        ++n;
    }
    const double inv = n ? 1.0 / static_cast<double>(n) : 0.0;
    const nlohmann::json report{
        {"config",
         {{"grounding", vgloss::to_string(cfg.grounding)},
          {"refinement", vgloss::to_string(cfg.refinement)},
          {"eta", cfg.eta},
          {"lambda", cfg.lambda}}},
        {"examples", per_example},
        {"aggregate", {{"L_g", sum_g * inv}, {"L_c", sum_c * inv}, {"L", sum_t * inv}}},
        {"n_examples", n},
        {"n_queries", queries},
        {"fallback_used", fallbacks}};
    std::cout << report.dump(2) << '\n';
    return kExitOk;
}

int run_gradcheck(const GradcheckFlags& f) {
    vgloss::GradcheckOptions o;
    o.seed = f.seed;
    o.trials = f.trials;
    bool ok = true;
    for (const auto& s : vgloss::run_gradcheck(o)) {
        if (s.trials == 0)
            continue;
        std::printf("%-28s trials %4zu  max_rel_error %.3e  %s\n", s.name.c_str(), s.trials, s.max_rel_error,
                    s.passed ? "ok" : "FAIL");
        ok = ok && s.passed;
    }
    if (f.trials == 0)
        std::printf("no trials requested\n");
    return ok ? kExitOk : kExitCheckFailed;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Visual-textual grounding losses: data generation, training, evaluation and gradient checks"};
    app.require_subcommand(1);

    GenFlags gen;
    auto* gen_cmd = app.add_subcommand("gen", "Write a synthetic JSONL dataset");
    gen_cmd->add_option("--out", gen.out, "Output path")->required();
    gen_cmd->add_option("--seed", gen.synth.seed, "Random seed")->capture_default_str();
    gen_cmd->add_option("--k", gen.synth.k, "Proposals per image")->check(CLI::PositiveNumber)->capture_default_str();
    gen_cmd->add_option("--classes", gen.synth.n_classes, "Object classes")->check(CLI::Range(2, 1 << 20))->capture_default_str();
    gen_cmd->add_option("--examples", gen.synth.n_examples, "Number of images")->capture_default_str();
    gen_cmd->add_option("--noise", gen.synth.box_noise, "Proposal corner jitter (fraction of box size)")->capture_default_str();
    gen_cmd->add_option("--text-dim", gen.synth.text_dim, "Query feature width")->check(CLI::PositiveNumber)->capture_default_str();
    gen_cmd->add_option("--visual-dim", gen.synth.visual_dim, "Proposal feature width")->check(CLI::PositiveNumber)->capture_default_str();
    gen_cmd->add_option("--distractors", gen.synth.n_distractors, "Random proposals per image")->capture_default_str();

    TrainFlags tr;
    auto* train_cmd = app.add_subcommand("train", "Train the grounding head");
    train_cmd->add_option("--data", tr.data, "Training JSONL")->required();
    tr.loss.add_to(train_cmd);
    train_cmd->add_option("--epochs", tr.epochs, "Epochs")->capture_default_str();
    train_cmd->add_option("--lr", tr.lr, "Initial learning rate")->check(CLI::NonNegativeNumber)->capture_default_str();
    train_cmd->add_option("--decay", tr.decay, "Per-epoch learning-rate decay")->capture_default_str();
    train_cmd->add_option("--seed", tr.seed, "Initialization and shuffling seed")->capture_default_str();
    train_cmd->add_option("--hidden", tr.hidden, "Fused feature width")->check(CLI::PositiveNumber)->capture_default_str();
    train_cmd->add_option("--batch-size", tr.batch_size, "Examples per update")->check(CLI::PositiveNumber)->capture_default_str();
    train_cmd->add_option("--metrics-out", tr.metrics_out, "Per-epoch metrics CSV");
    train_cmd->add_option("--ckpt-out", tr.ckpt_out, "Checkpoint JSON");
    train_cmd->add_option("--preds-out", tr.preds_out, "Predictions JSONL for every query of the dataset");

    AblateFlags ab;
    auto* ablate_cmd = app.add_subcommand("ablate", "Train every loss/hyper-parameter cell and write a CSV");
    ablate_cmd->add_option("--data", ab.data, "Dataset JSONL")->required();
    ablate_cmd->add_option("--out", ab.out, "Output CSV")->required();
    ablate_cmd->add_option("--epochs", ab.epochs, "Epochs per cell")->capture_default_str();
    ablate_cmd->add_option("--lr", ab.lr, "Initial learning rate")->capture_default_str();
    ablate_cmd->add_option("--decay", ab.decay, "Per-epoch learning-rate decay")->capture_default_str();
    ablate_cmd->add_option("--seed", ab.seed, "Seed shared by all cells")->capture_default_str();
    ablate_cmd->add_option("--hidden", ab.hidden, "Fused feature width")->capture_default_str();
    ablate_cmd->add_option("--groundings", ab.groundings, "Grounding losses")
        ->check(CLI::IsMember({"ce", "kl", "klsem"}))
        ->capture_default_str();
    ablate_cmd->add_option("--refinements", ab.refinements, "Refinement losses")
        ->check(CLI::IsMember({"smoothl1", "ciousem"}))
        ->capture_default_str();
    ablate_cmd->add_option("--etas", ab.etas, "IoU thresholds")->capture_default_str();
    ablate_cmd->add_option("--lambdas", ab.lambdas, "Refinement weights")->capture_default_str();

    EvalFlags ev;
    auto* eval_cmd = app.add_subcommand("eval", "Score predictions against a dataset");
    eval_cmd->add_option("--data", ev.data, "Dataset JSONL")->required();
    eval_cmd->add_option("--preds", ev.preds, "Predictions JSONL")->required();

    LossCmdFlags lo;
    auto* loss_cmd = app.add_subcommand("loss", "Report per-example and mean losses of a checkpoint");
    loss_cmd->add_option("--data", lo.data, "Dataset JSONL")->required();
    loss_cmd->add_option("--ckpt", lo.ckpt, "Checkpoint JSON")->required();
    lo.loss.add_to(loss_cmd);

    GradcheckFlags gc;
    auto* gc_cmd = app.add_subcommand("gradcheck", "Compare analytic gradients with central finite differences");
    gc_cmd->add_option("--seed", gc.seed, "Seed")->capture_default_str();
    gc_cmd->add_option("--trials", gc.trials, "Random instances per suite")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (*gen_cmd)
            return run_gen(gen);
        if (*train_cmd)
            return run_train(tr);
        if (*ablate_cmd)
            return run_ablate(ab);
        if (*eval_cmd)
            return run_eval(ev);
        if (*loss_cmd)
            return run_loss(lo);
        if (*gc_cmd)
            return run_gradcheck(gc);
    } catch (const vgloss::NumericalAbort& e) {
        std::cerr << "numerical abort: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitCheckFailed;
    }
    return kExitUsage;
}
