// gicli: train convex models, score group influence, run correlation sweeps
// against leave-k-out retraining, and select maximally influential groups.

#include "groupinfluence/bench.hpp"
#include "groupinfluence/datagen.hpp"
#include "groupinfluence/influence.hpp"
#include "groupinfluence/selection.hpp"
#include "groupinfluence/solver.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

namespace {

using namespace gi;

struct DatasetArgs {
    std::string uri;
    int m = 1000;
    int d = 5;
    std::uint64_t seed = 0;
    std::vector<int> classes;
    int max_per_class = 0;
    bool add_bias = false;

    void attach(CLI::App* app) {
        app->add_option("--data", uri,
                        "dataset URI: synth:gaussian | synth:blobs | idx:IMAGES,LABELS | "
                        "csv:PATH")
            ->required();
        app->add_option("--m", m, "synthetic sample count");
        app->add_option("--d", d, "synthetic feature count");
        app->add_option("--seed", seed, "seed for all named random streams");
        app->add_option("--classes", classes, "IDX class filter, e.g. --classes 1 7");
        app->add_option("--max-per-class", max_per_class, "IDX per-class sample cap");
        app->add_flag("--bias", add_bias, "append a constant-1 feature column");
    }

    Dataset load() const {
        auto colon = uri.find(':');
        if (colon == std::string::npos) throw FormatError("dataset URI needs a scheme: " + uri);
        std::string scheme = uri.substr(0, colon);
        std::string rest = uri.substr(colon + 1);
        if (scheme == "synth") {
            SyntheticSpec spec;
            spec.m = m;
            spec.d = d;
            spec.seed = seed;
            if (rest == "gaussian")
                spec.kind = SyntheticSpec::Kind::gaussian_binary;
            else if (rest == "blobs")
                spec.kind = SyntheticSpec::Kind::blobs;
            else
                throw FormatError("unknown synthetic kind: " + rest);
            return gen_synthetic(spec);
        }
        if (scheme == "idx") {
            auto comma = rest.find(',');
            if (comma == std::string::npos)
                throw FormatError("idx URI needs idx:IMAGES,LABELS");
            IdxOptions opts;
            opts.classes = classes;
            opts.max_per_class = max_per_class;
            opts.add_bias = add_bias;
            return load_mnist_idx(rest.substr(0, comma), rest.substr(comma + 1), opts);
        }
        if (scheme == "csv") {
            CsvOptions opts;
            opts.add_bias = add_bias;
            return load_csv_labeled(rest, opts);
        }
        throw FormatError("unknown dataset scheme: " + scheme);
    }
};

std::uint64_t fnv1a(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    std::uint64_t h = 1469598103934665603ull;
    char c;
    while (is.get(c)) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ull;
    }
    return h;
}

std::uint64_t dataset_digest(const Dataset& data) {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&](const void* p, std::size_t n) {
        const unsigned char* b = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 1099511628211ull;
        }
    };
    mix(data.features.data(), sizeof(double) * std::size_t(data.features.size()));
    mix(data.labels.data(), sizeof(double) * std::size_t(data.labels.size()));
    return h;
}

// Every command writes a manifest: the resolved flag values in the CLI config
// format, replayable with `gicli <cmd> --config <manifest>`.
void write_manifest(const CLI::App& app, const std::string& path, const Dataset& data) {
    std::ofstream os(path);
    if (!os) throw FormatError("cannot write manifest: " + path);
    os << "# gicli run manifest (version 1); replay with:\n";
    os << "#   gicli --config <this file> <subcommand>\n";
    os << "# dataset_id=" << data.id << "\n";
    os << "# dataset_digest=" << dataset_digest(data) << "\n";
    os << app.config_to_str(false, false);
}

int run(int argc, char** argv) {
    CLI::App app{"second-order group influence toolkit"};
    app.require_subcommand(1);
    app.set_config("--config", "", "read flags from a manifest / config file");

    // ---- train ----
    auto* ctrain = app.add_subcommand("train", "fit a model and write the binary model file");
    ctrain->configurable();
    DatasetArgs train_data;
    train_data.attach(ctrain);
    std::string family_name_arg;
    double l2 = 0.0, damping = 0.0;
    TrainConfig tc;
    std::string model_out = "model.bin";
    ctrain->add_option("--family", family_name_arg, "binary_logistic | softmax | quadratic")
        ->required();
    ctrain->add_option("--l2", l2, "L2 regularization strength");
    ctrain->add_option("--damping", damping, "Hessian damping added inside inverse solves");
    ctrain->add_option("--grad-tol", tc.grad_tol, "terminal gradient norm");
    ctrain->add_option("--max-iters", tc.max_outer_iters, "Newton iteration cap");
    ctrain->add_option("--out", model_out, "model file path");

    // ---- influence ----
    auto* cinf = app.add_subcommand("influence", "group influence scores for a test point");
    cinf->configurable();
    DatasetArgs inf_data;
    inf_data.attach(cinf);
    std::string inf_model_path;
    std::string group_arg;
    double fraction = 0.0;
    int count = 1;
    std::string mode_arg = "random";
    std::string test_arg = "misclassified";
    bool with_ground_truth = false;
    bool individual = false;
    std::string inf_out = "influence.csv";
    std::string inf_family;
    double inf_l2 = 0.0, inf_damping = 0.0;
    cinf->add_option("--model", inf_model_path, "trained model file (else trains in place)");
    cinf->add_option("--family", inf_family, "loss family when training in place");
    cinf->add_option("--l2", inf_l2, "L2 strength when training in place");
    cinf->add_option("--damping", inf_damping, "Hessian damping");
    cinf->add_option("--group", group_arg, "comma-separated sample indices");
    cinf->add_option("--fraction", fraction, "sample groups of this fraction instead");
    cinf->add_option("--count", count, "number of sampled groups");
    cinf->add_option("--mode", mode_arg, "random | coherent");
    cinf->add_option("--test", test_arg, "test point index, or 'misclassified'");
    cinf->add_flag("--ground-truth", with_ground_truth, "also retrain for the true change");
    cinf->add_flag("--individual", individual, "emit per-sample individual influences");
    cinf->add_option("--out", inf_out, "output CSV path");

    // ---- sweep ----
    auto* csweep = app.add_subcommand("sweep", "correlation sweep over group sizes");
    csweep->configurable();
    DatasetArgs sweep_data;
    sweep_data.attach(csweep);
    std::string sweep_family = "binary_logistic";
    double sweep_l2 = 0.01, sweep_damping = 0.0;
    std::vector<double> fractions;
    int groups_per_size = 50, trials = 5;
    std::string sweep_mode = "random";
    std::string sweep_test = "misclassified";
    std::string out_dir = "sweep_out";
    csweep->add_option("--family", sweep_family, "loss family");
    csweep->add_option("--l2", sweep_l2, "L2 strength");
    csweep->add_option("--damping", sweep_damping, "Hessian damping");
    csweep->add_option("--fractions", fractions, "group fractions in (0,1)")
        ->required()
        ->delimiter(',');
    csweep->add_option("--groups-per-size", groups_per_size, "groups per (fraction, trial)");
    csweep->add_option("--trials", trials, "trials per fraction");
    csweep->add_option("--mode", sweep_mode, "random | coherent");
    csweep->add_option("--test", sweep_test, "test point index, or 'misclassified'");
    csweep->add_option("--out", out_dir, "report directory");

    // ---- select ----
    auto* csel = app.add_subcommand("select", "most influential size-k group for a test point");
    csel->configurable();
    DatasetArgs sel_data;
    sel_data.attach(csel);
    std::string sel_family = "binary_logistic";
    double sel_l2 = 0.01, sel_damping = 0.0;
    int k = 0;
    double k_frac = 0.0;
    int pgd_iters = 500;
    std::string sel_test = "misclassified";
    std::string sel_out = "selection.csv";
    csel->add_option("--family", sel_family, "loss family");
    csel->add_option("--l2", sel_l2, "L2 strength");
    csel->add_option("--damping", sel_damping, "Hessian damping");
    csel->add_option("--k", k, "group size");
    csel->add_option("--k-frac", k_frac, "group size as a fraction of m");
    csel->add_option("--pgd-iters", pgd_iters, "projected gradient iterations");
    csel->add_option("--test", sel_test, "test point index, or 'misclassified'");
    csel->add_option("--out", sel_out, "output CSV path");

    CLI11_PARSE(app, argc, argv);

    auto resolve_test = [](const TrainedModel& tm, const Dataset& data,
                           const std::string& arg) -> Eigen::Index {
        if (arg == "misclassified") return first_misclassified(tm, data);
        return Eigen::Index(std::stol(arg));
    };

    if (ctrain->parsed()) {
        Dataset data = train_data.load();
        LossModel model{family_from_name(family_name_arg), l2, damping};
        TrainedModel tm = train(model, data, tc);
        std::uint32_t dcols = std::uint32_t(data.dim());
        std::uint32_t kk = model.family == LossFamily::softmax ? std::uint32_t(data.class_count)
                                                               : 1u;
        save_model(tm, model_out, dcols, kk);
        write_manifest(app, model_out + ".manifest", data);
        std::cout << "trained " << family_name(model.family) << " on " << data.id
                  << ": grad norm " << tm.final_grad_norm << " in " << tm.iterations_used
                  << " iterations -> " << model_out << " (digest " << fnv1a(model_out)
                  << ")\n";
        return 0;
    }

    if (cinf->parsed()) {
        Dataset data = inf_data.load();
        TrainConfig cfg;
        TrainedModel tm;
        if (!inf_model_path.empty()) {
            LoadedModel lm = load_model(inf_model_path);
            tm = lm.tm;
            tm.model.hessian_damping = inf_damping;
            if (Eigen::Index(lm.d) != data.dim())
                throw DimensionError("model axis d: model file has " + std::to_string(lm.d) +
                                     ", dataset has " + std::to_string(data.dim()));
        } else {
            if (inf_family.empty())
                throw CLI::ValidationError("--family", "required without --model");
            LossModel model{family_from_name(inf_family), inf_l2, inf_damping};
            tm = train(model, data, cfg);
        }
        Eigen::Index ti = resolve_test(tm, data, test_arg);
        Sample zt = sample_at(data, ti);

        std::vector<GroupSpec> groups;
        if (!group_arg.empty()) {
            std::vector<int> idx;
            std::stringstream ss(group_arg);
            std::string tok;
            while (std::getline(ss, tok, ',')) idx.push_back(std::stoi(tok));
            groups.push_back(GroupSpec::of(idx));
        } else if (fraction > 0.0) {
            int size = std::max(1, int(std::lround(fraction * double(data.size()))));
            groups = sample_groups(data, size, count, group_mode_from_name(mode_arg),
                                   inf_data.seed);
        } else if (!individual) {
            throw CLI::ValidationError("--group", "need --group, --fraction, or --individual");
        }

        std::ofstream csv(inf_out);
        if (!csv) throw FormatError("cannot write " + inf_out);
        csv << "group_id,group_size,p,test_index,first_order,first_unscaled,second_order,"
               "ground_truth,t_first_s,t_second_s\n";
        csv << std::setprecision(17);
        for (std::size_t g = 0; g < groups.size(); ++g) {
            GroupInfluenceScores s = score_group(tm, data, groups[g], zt, cfg);
            csv << g << ',' << groups[g].size() << ',' << groups[g].fraction(data.size())
                << ',' << ti << ',' << s.first << ',' << s.first_unscaled << ',' << s.second
                << ',';
            if (with_ground_truth) {
                TrainConfig oracle = cfg;
                oracle.grad_tol = 1e-10;
                csv << ground_truth_influence(tm, data, groups[g], zt, oracle);
            }
            csv << ',' << s.t_first_s << ',' << s.t_second_s << '\n';
        }
        if (individual) {
            std::ofstream ind(inf_out + ".individual.csv");
            ind << "index,influence\n" << std::setprecision(17);
            for (Eigen::Index i = 0; i < data.size(); ++i)
                ind << i << ',' << individual_influence(tm, data, i, zt, cfg) << '\n';
        }
        write_manifest(app, inf_out + ".manifest", data);
        std::cout << "wrote " << groups.size() << " group rows to " << inf_out << "\n";
        return 0;
    }

    if (csweep->parsed()) {
        Dataset data = sweep_data.load();
        LossModel model{family_from_name(sweep_family), sweep_l2, sweep_damping};
        SweepConfig cfg;
        cfg.group_fractions = fractions;
        std::sort(cfg.group_fractions.begin(), cfg.group_fractions.end());
        cfg.groups_per_size = groups_per_size;
        cfg.trials = trials;
        cfg.mode = group_mode_from_name(sweep_mode);
        cfg.base_seed = sweep_data.seed;
        if (sweep_test == "misclassified") {
            cfg.test_selection = TestSelection::misclassified_first;
        } else {
            cfg.test_selection = TestSelection::index;
            cfg.test_index = Eigen::Index(std::stol(sweep_test));
        }
        SweepResult res = run_sweep(model, data, cfg);
        emit_report(res, out_dir);
        write_manifest(app, out_dir + "/run.manifest", data);
        std::cout << "sweep over " << fractions.size() << " fractions x " << trials
                  << " trials -> " << out_dir << "/sweep.csv (test index " << res.test_index
                  << ")\n";
        return 0;
    }

    if (csel->parsed()) {
        Dataset data = sel_data.load();
        LossModel model{family_from_name(sel_family), sel_l2, sel_damping};
        TrainConfig cfg;
        TrainedModel tm = train(model, data, cfg);
        if (k <= 0 && k_frac > 0.0)
            k = std::max(1, int(std::lround(k_frac * double(data.size()))));
        if (k <= 0) throw CLI::ValidationError("--k", "need --k > 0 or --k-frac");
        Eigen::Index ti = resolve_test(tm, data, sel_test);
        Sample zt = sample_at(data, ti);

        SelectionProblem prob = build_selection_problem(tm, data, zt, k, cfg);
        PgdConfig pgd;
        pgd.iters = pgd_iters;
        pgd.seed = sel_data.seed;
        SelectionResult res = select_group(prob, pgd);

        GroupSpec greedy = greedy_first_order_group(tm, data, zt, k, cfg);
        double greedy_obj =
            test_loss_influence(tm, data, greedy, zt, InfluenceOrder::second, cfg);
        double random_mean = 0.0;
        auto rand_groups = sample_groups(data, k, 100, GroupMode::random, sel_data.seed);
        for (auto& g : rand_groups)
            random_mean += test_loss_influence(tm, data, g, zt, InfluenceOrder::second, cfg);
        random_mean /= double(rand_groups.size());

        bool flagged_suboptimal = false;
        if (data.size() <= 20) {
            double best = 0.0;
            best_group_exhaustive(tm, data, zt, k, cfg, &best);
            flagged_suboptimal = res.objective_discrete < best - 1e-9;
        }

        std::ofstream csv(sel_out);
        if (!csv) throw FormatError("cannot write " + sel_out);
        csv << std::setprecision(17);
        csv << "index,weight,chosen\n";
        for (Eigen::Index i = 0; i < res.weights.size(); ++i) {
            bool chosen = std::binary_search(res.chosen.indices.begin(),
                                             res.chosen.indices.end(), int(i));
            csv << i << ',' << res.weights[i] << ',' << (chosen ? 1 : 0) << '\n';
        }
        csv << "# k=" << k << " objective_relaxed=" << res.objective_relaxed
            << " objective_discrete=" << res.objective_discrete << " greedy=" << greedy_obj
            << " random_mean=" << random_mean
            << " suboptimal_vs_exhaustive=" << (flagged_suboptimal ? 1 : 0)
            << " l1_radius=" << k << " rounding=topk_abs_tie_low_index\n";
        write_manifest(app, sel_out + ".manifest", data);
        std::cout << "selected group of " << k << ": discrete objective "
                  << res.objective_discrete << " (greedy " << greedy_obj << ", random mean "
                  << random_mean << ") -> " << sel_out << "\n";
        return 0;
    }
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
