#pragma once

#include "groupinfluence/rng.hpp"
#include "groupinfluence/types.hpp"

#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace gi {

struct SyntheticSpec {
    enum class Kind { gaussian_binary, blobs };
    Kind kind = Kind::gaussian_binary;
    int m = 10000;
    int d = 5;
    std::uint64_t seed = 0;
    double mean_class0 = 0.1;
    double mean_class1 = 0.8;
    double cov_lo = 0.0;
    double cov_hi = 1.0;
    int blob_classes = 4;

    void validate() const {
        if (m < 2 || d < 1) throw DimensionError("SyntheticSpec: need m >= 2, d >= 1");
        if (kind == Kind::blobs && blob_classes < 2)
            throw DimensionError("SyntheticSpec: blobs need >= 2 classes");
    }
};

// gaussian_binary: two classes with means 0.1 / 0.8 on every coordinate and
// per-class diagonal covariance drawn uniformly from (cov_lo, cov_hi).
// blobs: isotropic unit-variance Gaussian blobs around seeded centers,
// balanced classes. Bitwise-deterministic per seed.
inline Dataset gen_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    Dataset out;
    out.features.resize(spec.m, spec.d);
    out.labels.resize(spec.m);
    if (spec.kind == SyntheticSpec::Kind::gaussian_binary) {
        Rng cov_rng("synth.gaussian.cov", spec.seed);
        Matrix sd(2, spec.d);
        for (int c = 0; c < 2; ++c)
            for (int j = 0; j < spec.d; ++j)
                sd(c, j) = std::sqrt(cov_rng.uniform(spec.cov_lo, spec.cov_hi));
        Rng rng("synth.gaussian.samples", spec.seed);
        for (int i = 0; i < spec.m; ++i) {
            int c = i % 2;
            double mean = c == 0 ? spec.mean_class0 : spec.mean_class1;
            for (int j = 0; j < spec.d; ++j)
                out.features(i, j) = mean + sd(c, j) * rng.normal();
            out.labels[i] = c;
        }
        out.class_count = 2;
        out.id = "synth:gaussian:m=" + std::to_string(spec.m) + ":d=" + std::to_string(spec.d) +
                 ":seed=" + std::to_string(spec.seed);
    } else {
        Rng ctr_rng("synth.blobs.centers", spec.seed);
        Matrix centers(spec.blob_classes, spec.d);
        for (int c = 0; c < spec.blob_classes; ++c)
            for (int j = 0; j < spec.d; ++j) centers(c, j) = ctr_rng.uniform(-10.0, 10.0);
        Rng rng("synth.blobs.samples", spec.seed);
        for (int i = 0; i < spec.m; ++i) {
            int c = i % spec.blob_classes;
            for (int j = 0; j < spec.d; ++j) out.features(i, j) = centers(c, j) + rng.normal();
            out.labels[i] = c;
        }
        out.class_count = spec.blob_classes;
        out.id = "synth:blobs:m=" + std::to_string(spec.m) + ":d=" + std::to_string(spec.d) +
                 ":seed=" + std::to_string(spec.seed);
    }
    return out;
}

struct IdxOptions {
    std::vector<int> classes;     // empty = keep all; labels remapped to filter order
    int max_per_class = 0;        // 0 = unlimited
    bool normalize = true;        // scale pixel bytes by 1/255
    bool add_bias = false;        // append a constant-1 feature column
};

namespace detail {

inline std::uint32_t read_be_u32(std::istream& is, const char* what) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw FormatError(std::string("IDX file truncated reading ") + what);
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
           (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

inline std::string hex_magic(std::uint32_t m) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "0x%08x", m);
    return buf;
}

}  // namespace detail

// Parses the big-endian IDX pair used by MNIST-style datasets: images with
// magic 0x00000803 and dims (n, rows, cols), labels with magic 0x00000801.
inline Dataset load_mnist_idx(const std::string& images_path, const std::string& labels_path,
                              const IdxOptions& opts = {}) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw FormatError("cannot open IDX images file: " + images_path);
    std::uint32_t magic = detail::read_be_u32(img, "images magic");
    if (magic != 0x00000803u)
        throw FormatError("unexpected magic " + detail::hex_magic(magic) + " in " + images_path);
    std::uint32_t n = detail::read_be_u32(img, "image count");
    std::uint32_t rows = detail::read_be_u32(img, "rows");
    std::uint32_t cols = detail::read_be_u32(img, "cols");

    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw FormatError("cannot open IDX labels file: " + labels_path);
    std::uint32_t lmagic = detail::read_be_u32(lab, "labels magic");
    if (lmagic != 0x00000801u)
        throw FormatError("unexpected magic " + detail::hex_magic(lmagic) + " in " + labels_path);
    std::uint32_t ln = detail::read_be_u32(lab, "label count");
    if (ln != n)
        throw DimensionError("IDX axis n: " + std::to_string(n) + " images vs " +
                             std::to_string(ln) + " labels");

    const std::size_t pixels = std::size_t(rows) * cols;
    std::vector<unsigned char> buf(pixels);
    std::vector<unsigned char> raw_labels(n);
    lab.read(reinterpret_cast<char*>(raw_labels.data()), n);
    if (!lab) throw FormatError("IDX labels payload truncated in " + labels_path);

    // class filter -> remapped label in filter order
    std::map<int, int> remap;
    for (std::size_t c = 0; c < opts.classes.size(); ++c) remap[opts.classes[c]] = int(c);

    std::vector<int> kept_rows;
    std::vector<int> kept_labels;
    std::map<int, int> per_class;
    for (std::uint32_t i = 0; i < n; ++i) {
        int y = raw_labels[i];
        int mapped = y;
        if (!opts.classes.empty()) {
            auto it = remap.find(y);
            if (it == remap.end()) continue;
            mapped = it->second;
        }
        if (opts.max_per_class > 0 && per_class[mapped] >= opts.max_per_class) continue;
        ++per_class[mapped];
        kept_rows.push_back(int(i));
        kept_labels.push_back(mapped);
    }
    if (kept_rows.empty()) throw FormatError("IDX filter kept no samples");

    const int d = int(pixels) + (opts.add_bias ? 1 : 0);
    Dataset out;
    out.features.resize(Eigen::Index(kept_rows.size()), d);
    out.labels.resize(Eigen::Index(kept_rows.size()));
    int next = 0;
    Eigen::Index r = 0;
    for (std::size_t k = 0; k < kept_rows.size(); ++k) {
        // images are read sequentially; skip rows not kept
        while (next <= kept_rows[k]) {
            img.read(reinterpret_cast<char*>(buf.data()), std::streamsize(pixels));
            if (!img) throw FormatError("IDX images payload truncated in " + images_path);
            ++next;
        }
        for (std::size_t px = 0; px < pixels; ++px)
            out.features(r, Eigen::Index(px)) =
                opts.normalize ? buf[px] / 255.0 : double(buf[px]);
        if (opts.add_bias) out.features(r, d - 1) = 1.0;
        out.labels[r] = kept_labels[k];
        ++r;
    }
    if (opts.classes.empty()) {
        int max_label = 0;
        for (int y : kept_labels) max_label = std::max(max_label, y);
        out.class_count = max_label + 1;
    } else {
        out.class_count = int(opts.classes.size());
    }
    out.id = "idx:" + images_path;
    out.validate();
    return out;
}

struct CsvOptions {
    bool add_bias = false;
};

// Numeric CSV, last column is the label, optional header row. Integer-valued
// labels make a classification dataset, anything else is regression.
inline Dataset load_csv_labeled(const std::string& path, const CsvOptions& opts = {}) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot open CSV file: " + path);
    std::vector<std::vector<double>> rows;
    std::string line;
    std::size_t width = 0;
    bool first = true;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        bool numeric = true;
        while (std::getline(ss, cell, ',')) {
            try {
                std::size_t pos = 0;
                double v = std::stod(cell, &pos);
                while (pos < cell.size() && std::isspace(static_cast<unsigned char>(cell[pos])))
                    ++pos;
                if (pos != cell.size()) throw std::invalid_argument(cell);
                row.push_back(v);
            } catch (const std::exception&) {
                numeric = false;
                break;
            }
        }
        if (!numeric) {
            if (first) { first = false; continue; }  // header row
            throw FormatError("non-numeric cell in CSV row: " + line);
        }
        first = false;
        if (width == 0) width = row.size();
        if (row.size() != width)
            throw FormatError("ragged CSV row (got " + std::to_string(row.size()) +
                              " cells, expected " + std::to_string(width) + "): " + line);
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw FormatError("CSV file has no data rows: " + path);
    if (width < 2) throw FormatError("CSV needs at least one feature column plus label");

    const Eigen::Index m = Eigen::Index(rows.size());
    const Eigen::Index d = Eigen::Index(width) - 1 + (opts.add_bias ? 1 : 0);
    Dataset out;
    out.features.resize(m, d);
    out.labels.resize(m);
    bool integral = true;
    double max_label = 0.0, min_label = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) {
        for (std::size_t j = 0; j + 1 < width; ++j) out.features(i, Eigen::Index(j)) = rows[i][j];
        if (opts.add_bias) out.features(i, d - 1) = 1.0;
        double y = rows[i][width - 1];
        out.labels[i] = y;
        if (y != std::floor(y)) integral = false;
        max_label = std::max(max_label, y);
        min_label = std::min(min_label, y);
    }
    out.class_count = (integral && min_label >= 0) ? int(max_label) + 1 : 0;
    out.id = "csv:" + path;
    out.validate();
    return out;
}

enum class GroupMode { random, coherent };

inline GroupMode group_mode_from_name(const std::string& s) {
    if (s == "random") return GroupMode::random;
    if (s == "coherent") return GroupMode::coherent;
    throw FormatError("unknown group mode: " + s);
}

// Samples `count` groups of the given size. random: uniform without
// replacement from all of S. coherent: a class is picked uniformly among
// classes with >= size members, then members uniformly within it; the class
// is re-drawn per group. Groups are sampled independently, so duplicates
// across groups can occur.
inline std::vector<GroupSpec> sample_groups(const Dataset& data, int size, int count,
                                            GroupMode mode, std::uint64_t seed) {
    const Eigen::Index m = data.size();
    if (size < 1 || size >= m)
        throw DimensionError("group size " + std::to_string(size) + " must be in [1, m)");
    Rng rng(mode == GroupMode::random ? "groups.random" : "groups.coherent", seed);

    std::vector<std::vector<int>> by_class;
    if (mode == GroupMode::coherent) {
        if (data.class_count < 1)
            throw FormatError("coherent groups need a classification dataset");
        by_class.resize(std::size_t(data.class_count));
        for (Eigen::Index i = 0; i < m; ++i)
            by_class[std::size_t(data.labels[i])].push_back(int(i));
        std::vector<std::size_t> eligible;
        for (std::size_t c = 0; c < by_class.size(); ++c)
            if (int(by_class[c].size()) >= size) eligible.push_back(c);
        if (eligible.empty()) {
            std::string counts;
            for (std::size_t c = 0; c < by_class.size(); ++c)
                counts += (c ? ", " : "") + std::to_string(c) + ":" +
                          std::to_string(by_class[c].size());
            throw FormatError("no class has >= " + std::to_string(size) +
                              " members for coherent sampling (class counts: " + counts + ")");
        }
    }

    auto draw_without_replacement = [&](std::vector<int> pool, int want) {
        // partial Fisher-Yates
        for (int j = 0; j < want; ++j) {
            std::size_t pick = j + std::size_t(rng.below(pool.size() - std::size_t(j)));
            std::swap(pool[std::size_t(j)], pool[pick]);
        }
        pool.resize(std::size_t(want));
        return GroupSpec::of(std::move(pool));
    };

    std::vector<GroupSpec> out;
    out.reserve(std::size_t(count));
    for (int g = 0; g < count; ++g) {
        if (mode == GroupMode::random) {
            std::vector<int> pool(static_cast<std::size_t>(m));
            for (Eigen::Index i = 0; i < m; ++i) pool[std::size_t(i)] = int(i);
            out.push_back(draw_without_replacement(std::move(pool), size));
        } else {
            std::vector<std::size_t> eligible;
            for (std::size_t c = 0; c < by_class.size(); ++c)
                if (int(by_class[c].size()) >= size) eligible.push_back(c);
            std::size_t cls = eligible[std::size_t(rng.below(eligible.size()))];
            out.push_back(draw_without_replacement(by_class[cls], size));
        }
    }
    return out;
}

}  // namespace gi
