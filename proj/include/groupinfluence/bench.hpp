#pragma once

#include "groupinfluence/datagen.hpp"
#include "groupinfluence/influence.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace gi {

struct DegenerateCorrelation : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Sample Pearson correlation coefficient. Zero variance on either side is an
// error, never a silent 0.
inline double pearson(const Vector& x, const Vector& y) {
    if (x.size() != y.size())
        throw DimensionError("pearson axis n: " + std::to_string(x.size()) + " vs " +
                             std::to_string(y.size()));
    if (x.size() < 2) throw DimensionError("pearson needs n >= 2");
    const double n = double(x.size());
    double mx = x.mean(), my = y.mean();
    Vector dx = x.array() - mx, dy = y.array() - my;
    double sx = dx.norm(), sy = dy.norm();
    if (sx == 0.0 || sy == 0.0)
        throw DegenerateCorrelation("pearson: zero variance input");
    (void)n;
    return dx.dot(dy) / (sx * sy);
}

// Ground-truth removal influence by leave-k-out retraining. The retrained
// objective is (1/(m-|U|)) sum_{S\U} loss + (l2/2)||theta||^2, realized by
// per-sample weights m/(m-|U|) on the retained samples. Returns
// loss(z_t; theta_U) - loss(z_t; theta*); positive = removal increased the
// test loss.
inline double ground_truth_influence(const TrainedModel& tm, const Dataset& data,
                                     const GroupSpec& U, const Sample& zt,
                                     const TrainConfig& config) {
    U.validate(data.size());
    if (U.size() == 0) return 0.0;
    const Eigen::Index m = data.size();
    Vector w = Vector::Constant(m, double(m) / double(m - U.size()));
    for (int i : U.indices) w[i] = 0.0;
    TrainedModel retrained = train(tm.model, data, w, config, &tm.theta_star);
    double after = sample_loss(tm.model, data, retrained.theta_star, zt.x, zt.y);
    double before = sample_loss(tm.model, data, tm.theta_star, zt.x, zt.y);
    return after - before;
}

enum class TestSelection { misclassified_first, index };

struct SweepConfig {
    std::vector<double> group_fractions;
    int groups_per_size = 50;
    int trials = 5;
    GroupMode mode = GroupMode::random;
    TestSelection test_selection = TestSelection::misclassified_first;
    Eigen::Index test_index = 0;
    std::uint64_t base_seed = 0;
    TrainConfig influence_cfg{1e-8, 200, 1e-10, 10000};
    TrainConfig oracle_cfg{1e-10, 400, 1e-10, 10000};

    void validate() const {
        if (group_fractions.empty()) throw DimensionError("sweep needs >= 1 fraction");
        for (std::size_t i = 0; i < group_fractions.size(); ++i) {
            double f = group_fractions[i];
            if (!(f > 0.0 && f < 1.0))
                throw DimensionError("sweep fraction must lie in (0, 1)");
            if (i > 0 && f < group_fractions[i - 1])
                throw DimensionError("sweep fractions must be sorted ascending");
        }
        if (groups_per_size < 2) throw DimensionError("sweep needs groups_per_size >= 2");
        if (trials < 1) throw DimensionError("sweep needs trials >= 1");
    }
};

struct GroupRecord {
    GroupSpec group;
    double first = 0.0;
    double first_unscaled = 0.0;
    double second = 0.0;
    double ground_truth = 0.0;
};

// One (fraction, trial) cell of a sweep.
struct SweepCell {
    double fraction = 0.0;
    int trial = 0;
    std::uint64_t seed = 0;
    std::vector<GroupRecord> records;
    double pearson_first = 0.0;
    double pearson_first_unscaled = 0.0;
    double pearson_second = 0.0;
    bool degenerate = false;
    double mean_t_first_s = 0.0;
    double mean_t_second_s = 0.0;
    double wall_s = 0.0;
};

struct SweepResult {
    std::string dataset_id;
    GroupMode mode = GroupMode::random;
    Eigen::Index test_index = 0;
    std::uint64_t base_seed = 0;
    std::vector<SweepCell> cells;
};

// First sample misclassified under theta*; classification only.
inline Eigen::Index first_misclassified(const TrainedModel& tm, const Dataset& data) {
    if (data.class_count < 2)
        throw FormatError("misclassified test selection needs a classification dataset");
    for (Eigen::Index i = 0; i < data.size(); ++i) {
        double predicted;
        if (tm.model.family == LossFamily::binary_logistic) {
            predicted = data.features.row(i) * tm.theta_star > 0.0 ? 1.0 : 0.0;
        } else {
            auto T = detail::theta_blocks(tm.theta_star, data.dim(), data.class_count);
            Eigen::Index best;
            (data.features.row(i) * T).maxCoeff(&best);
            predicted = double(best);
        }
        if (predicted != data.labels[i]) return i;
    }
    return 0;  // nothing misclassified; fall back to the first sample
}

inline std::uint64_t cell_seed(std::uint64_t base, std::size_t fraction_idx, int trial) {
    return base ^ (0x9e3779b97f4a7c15ull * (fraction_idx + 1)) ^
           (0xbf58476d1ce4e5b9ull * std::uint64_t(trial + 1));
}

// Full correlation sweep: per (fraction, trial), sample groups, score them
// with both influence orders, retrain for the ground truth, and correlate.
// Deterministic given the manifest seeds.
inline SweepResult run_sweep(const LossModel& model, const Dataset& data,
                             const SweepConfig& cfg) {
    cfg.validate();
    SweepResult result;
    result.dataset_id = data.id;
    result.mode = cfg.mode;
    result.base_seed = cfg.base_seed;

    TrainedModel tm = train(model, data, std::nullopt, cfg.influence_cfg);
    result.test_index = cfg.test_selection == TestSelection::misclassified_first
                            ? first_misclassified(tm, data)
                            : cfg.test_index;
    Sample zt = sample_at(data, result.test_index);

    using clock = std::chrono::steady_clock;
    for (std::size_t fi = 0; fi < cfg.group_fractions.size(); ++fi) {
        double f = cfg.group_fractions[fi];
        int size = std::max(1, int(std::lround(f * double(data.size()))));
        if (size >= data.size()) size = int(data.size()) - 1;
        for (int trial = 0; trial < cfg.trials; ++trial) {
            SweepCell cell;
            cell.fraction = f;
            cell.trial = trial;
            cell.seed = cell_seed(cfg.base_seed, fi, trial);
            auto t0 = clock::now();
            auto groups =
                sample_groups(data, size, cfg.groups_per_size, cfg.mode, cell.seed);
            double sum_tf = 0.0, sum_ts = 0.0;
            for (auto& g : groups) {
                GroupRecord rec;
                rec.group = g;
                GroupInfluenceScores s = score_group(tm, data, g, zt, cfg.influence_cfg);
                rec.first = s.first;
                rec.first_unscaled = s.first_unscaled;
                rec.second = s.second;
                rec.ground_truth = ground_truth_influence(tm, data, g, zt, cfg.oracle_cfg);
                sum_tf += s.t_first_s;
                sum_ts += s.t_second_s;
                cell.records.push_back(std::move(rec));
            }
            const auto n = cell.records.size();
            Vector truth(n), v1(n), v1u(n), v2(n);
            for (std::size_t i = 0; i < n; ++i) {
                truth[Eigen::Index(i)] = cell.records[i].ground_truth;
                v1[Eigen::Index(i)] = cell.records[i].first;
                v1u[Eigen::Index(i)] = cell.records[i].first_unscaled;
                v2[Eigen::Index(i)] = cell.records[i].second;
            }
            try {
                cell.pearson_first = pearson(v1, truth);
                cell.pearson_first_unscaled = pearson(v1u, truth);
                cell.pearson_second = pearson(v2, truth);
            } catch (const DegenerateCorrelation&) {
                cell.degenerate = true;
            }
            cell.mean_t_first_s = sum_tf / double(n);
            cell.mean_t_second_s = sum_ts / double(n);
            cell.wall_s = std::chrono::duration<double>(clock::now() - t0).count();
            result.cells.push_back(std::move(cell));
        }
    }
    return result;
}

namespace detail {

inline std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

inline const char* mode_name(GroupMode m) {
    return m == GroupMode::random ? "random" : "coherent";
}

inline double mean_abs(const std::vector<GroupRecord>& recs, double GroupRecord::*field) {
    double s = 0.0;
    for (auto& r : recs) s += std::abs(r.*field);
    return recs.empty() ? 0.0 : s / double(recs.size());
}

// scatter of predictions vs ground truth with the y=x guide line
inline void write_scatter_svg(const std::string& path, const std::vector<GroupRecord>& recs,
                              double GroupRecord::*field, const std::string& title) {
    const int W = 480, H = 480, pad = 48;
    double lo = 0.0, hi = 0.0;
    for (auto& r : recs) {
        lo = std::min({lo, r.ground_truth, r.*field});
        hi = std::max({hi, r.ground_truth, r.*field});
    }
    if (hi <= lo) hi = lo + 1.0;
    double span = hi - lo;
    lo -= 0.05 * span;
    hi += 0.05 * span;
    auto sx = [&](double v) { return pad + (v - lo) / (hi - lo) * (W - 2 * pad); };
    auto sy = [&](double v) { return H - pad - (v - lo) / (hi - lo) * (H - 2 * pad); };

    std::ofstream os(path);
    if (!os) throw FormatError("cannot write SVG: " + path);
    os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
       << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
       << "\">\n";
    os << "<rect x=\"" << pad << "\" y=\"" << pad << "\" width=\"" << W - 2 * pad
       << "\" height=\"" << H - 2 * pad << "\" fill=\"none\" stroke=\"black\"/>\n";
    os << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\">" << title
       << "</text>\n";
    os << "<text x=\"" << W / 2 << "\" y=\"" << H - 10
       << "\" text-anchor=\"middle\">ground truth</text>\n";
    os << "<line x1=\"" << sx(lo) << "\" y1=\"" << sy(lo) << "\" x2=\"" << sx(hi) << "\" y2=\""
       << sy(hi) << "\" stroke=\"green\"/>\n";
    for (auto& r : recs)
        os << "<circle cx=\"" << sx(r.ground_truth) << "\" cy=\"" << sy(r.*field)
           << "\" r=\"2.5\" fill=\"steelblue\" fill-opacity=\"0.6\"/>\n";
    os << "</svg>\n";
}

}  // namespace detail

// Writes sweep.csv (one row per fraction x trial x method) and one scatter
// SVG per (fraction, method) into out_dir.
inline void emit_report(const SweepResult& result, const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    std::ofstream csv(out_dir + "/sweep.csv");
    if (!csv) throw FormatError("cannot write sweep.csv in " + out_dir);
    csv << "dataset_id,mode,fraction,trial,method,pearson,n_groups,mean_abs_pred,"
           "mean_abs_truth,wall_s,seed\n";
    struct Method {
        const char* name;
        double GroupRecord::*field;
        double SweepCell::*corr;
    };
    const Method methods[] = {
        {"first", &GroupRecord::first, &SweepCell::pearson_first},
        {"first_unscaled", &GroupRecord::first_unscaled, &SweepCell::pearson_first_unscaled},
        {"second", &GroupRecord::second, &SweepCell::pearson_second},
    };
    for (auto& cell : result.cells) {
        for (auto& m : methods) {
            csv << result.dataset_id << ',' << detail::mode_name(result.mode) << ','
                << detail::fmt(cell.fraction) << ',' << cell.trial << ',' << m.name << ','
                << (cell.degenerate ? "degenerate" : detail::fmt(cell.*(m.corr))) << ','
                << cell.records.size() << ',' << detail::fmt(detail::mean_abs(cell.records, m.field))
                << ',' << detail::fmt(detail::mean_abs(cell.records, &GroupRecord::ground_truth))
                << ',' << detail::fmt(cell.wall_s) << ',' << cell.seed << '\n';
        }
    }
    csv.close();

    // scatters aggregate all trials of one fraction
    std::vector<double> fractions;
    for (auto& cell : result.cells)
        if (fractions.empty() || fractions.back() != cell.fraction)
            fractions.push_back(cell.fraction);
    for (double f : fractions) {
        std::vector<GroupRecord> recs;
        for (auto& cell : result.cells)
            if (cell.fraction == f)
                recs.insert(recs.end(), cell.records.begin(), cell.records.end());
        for (auto& m : {std::pair{"first", &GroupRecord::first},
                        std::pair{"second", &GroupRecord::second}}) {
            std::ostringstream name;
            name << out_dir << "/scatter_f" << std::setprecision(4) << f << "_" << m.first
                 << ".svg";
            detail::write_scatter_svg(name.str(), recs, m.second,
                                      std::string(m.first) + " order, fraction " +
                                          detail::fmt(f));
        }
    }
}

struct TimingResult {
    double mean_first_s = 0.0;
    double mean_second_s = 0.0;
    double ratio = 0.0;
};

// Wall-clock comparison of the two influence orders over the given groups;
// the first 3 evaluations are warmup and excluded from the means.
inline TimingResult time_methods(const TrainedModel& tm, const Dataset& data,
                                 const std::vector<GroupSpec>& groups, const Sample& zt,
                                 const TrainConfig& cfg) {
    TimingResult out;
    int counted = 0;
    for (std::size_t i = 0; i < groups.size() + 3; ++i) {
        const GroupSpec& g = groups[i % groups.size()];
        GroupInfluenceScores s = score_group(tm, data, g, zt, cfg);
        if (i < 3) continue;  // warmup
        out.mean_first_s += s.t_first_s;
        out.mean_second_s += s.t_second_s;
        ++counted;
    }
    out.mean_first_s /= double(counted);
    out.mean_second_s /= double(counted);
    out.ratio = out.mean_second_s / out.mean_first_s;
    return out;
}

}  // namespace gi
