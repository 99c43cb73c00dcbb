#pragma once

// Versioned binary model files: 8-byte magic, u64 header length, a JSON
// header (kind, hyperparameters, schema hash, shapes) and a little-endian
// payload. Bytes depend only on the model, so equal models give equal files.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <variant>

#include <nlohmann/json.hpp>

#include "phenoicu/common.hpp"
#include "phenoicu/forest.hpp"
#include "phenoicu/lstm.hpp"

namespace phenoicu {

static_assert(std::endian::native == std::endian::little, "model files assume a little-endian host");

inline constexpr char kModelMagic[8] = {'P', 'I', 'C', 'U', 'M', 'D', 'L', '1'};
inline constexpr int kModelFormatVersion = 1;

struct ModelMeta {
    std::string task;
    std::string schema_hash;
    nlohmann::json extra = nlohmann::json::object();  // feature config, standardizer, ...
};

using AnyModel = std::variant<Forest, Lstm>;

struct ModelFile {
    AnyModel model;
    ModelMeta meta;
};

namespace detail {

template <class T>
void put(std::ostream& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.write(buf, sizeof(T));
}

template <class T>
T get(std::istream& in) {
    char buf[sizeof(T)];
    if (!in.read(buf, sizeof(T))) throw DataError("model file truncated");
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
}

inline void put_matrix(std::ostream& out, const Eigen::MatrixXd& m) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
        for (Eigen::Index i = 0; i < m.rows(); ++i) put<double>(out, m(i, j));
    }
}

inline Eigen::MatrixXd get_matrix(std::istream& in, Eigen::Index rows, Eigen::Index cols) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j) {
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = get<double>(in);
    }
    return m;
}

}  // namespace detail

inline void save_model(std::ostream& out, const AnyModel& model, const ModelMeta& meta) {
    nlohmann::json h;
    h["format_version"] = kModelFormatVersion;
    h["task"] = meta.task;
    h["schema_hash"] = meta.schema_hash;
    h["extra"] = meta.extra;
    if (const auto* f = std::get_if<Forest>(&model)) {
        h["kind"] = "forest";
        h["hyperparameters"] = f->config.to_json();
        h["n_features"] = f->n_features;
        h["n_classes"] = f->n_classes;
        h["n_trees"] = f->trees.size();
    } else {
        const auto& l = std::get<Lstm>(model);
        h["kind"] = "lstm";
        h["inputs"] = l.params.inputs();
        h["hidden"] = l.params.hidden();
        h["outputs"] = l.params.outputs();
        h["loss_curve"] = l.loss_curve;
    }
    const std::string header = h.dump();
    out.write(kModelMagic, sizeof kModelMagic);
    detail::put<std::uint64_t>(out, header.size());
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    if (const auto* f = std::get_if<Forest>(&model)) {
        for (const auto& t : f->trees) {
            detail::put<std::uint64_t>(out, t.nodes.size());
            for (const auto& n : t.nodes) {
                detail::put<std::int32_t>(out, n.feature);
                detail::put<double>(out, n.threshold);
                detail::put<std::int32_t>(out, n.left);
                detail::put<std::int32_t>(out, n.right);
                detail::put<double>(out, n.cover);
                for (double v : n.value) detail::put<double>(out, v);
            }
        }
    } else {
        for (const auto* m : std::get<Lstm>(model).params.tensors()) detail::put_matrix(out, *m);
    }
    if (!out) throw DataError("failed writing model file");
}

inline ModelFile load_model(std::istream& in) {
    char magic[8];
    if (!in.read(magic, sizeof magic) || std::memcmp(magic, kModelMagic, sizeof magic) != 0) {
        throw DataError("not a model file (bad magic)");
    }
    const auto len = detail::get<std::uint64_t>(in);
    if (len > (1u << 30)) throw DataError("model header too large");
    std::string header(len, '\0');
    if (!in.read(header.data(), static_cast<std::streamsize>(len))) throw DataError("model file truncated");
    nlohmann::json h;
    try {
        h = nlohmann::json::parse(header);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("model header is not JSON: ") + e.what());
    }
    if (h.value("format_version", 0) != kModelFormatVersion) throw DataError("unsupported model format version");

    ModelFile mf;
    mf.meta.task = h.value("task", "");
    mf.meta.schema_hash = h.value("schema_hash", "");
    mf.meta.extra = h.value("extra", nlohmann::json::object());
    const std::string kind = h.at("kind").get<std::string>();
    if (kind == "forest") {
        Forest f;
        f.config = ForestConfig::from_json(h.at("hyperparameters"));
        f.n_features = h.at("n_features").get<std::size_t>();
        f.n_classes = h.at("n_classes").get<int>();
        const auto K = static_cast<std::size_t>(f.n_classes);
        f.trees.resize(h.at("n_trees").get<std::size_t>());
        for (auto& t : f.trees) {
            const auto n = detail::get<std::uint64_t>(in);
            t.nodes.resize(n);
            for (auto& node : t.nodes) {
                node.feature = detail::get<std::int32_t>(in);
                node.threshold = detail::get<double>(in);
                node.left = detail::get<std::int32_t>(in);
                node.right = detail::get<std::int32_t>(in);
                node.cover = detail::get<double>(in);
                node.value.resize(K);
                for (auto& v : node.value) v = detail::get<double>(in);
                const auto bad_child = [&](int c) { return c < 0 || static_cast<std::uint64_t>(c) >= n; };
                if (node.feature >= 0 &&
                    (bad_child(node.left) || bad_child(node.right) || static_cast<std::size_t>(node.feature) >= f.n_features)) {
                    throw DataError("model file has an invalid tree node");
                }
            }
        }
        mf.model = std::move(f);
    } else if (kind == "lstm") {
        const int D = h.at("inputs").get<int>(), H = h.at("hidden").get<int>(), O = h.at("outputs").get<int>();
        Lstm l(LstmParams::zeros(D, H, O));
        for (auto* m : l.params.tensors()) *m = detail::get_matrix(in, m->rows(), m->cols());
        l.loss_curve = h.value("loss_curve", std::vector<double>{});
        mf.model = std::move(l);
    } else {
        throw DataError("unknown model kind '" + kind + "'");
    }
    return mf;
}

inline void save_model_file(const std::string& path, const AnyModel& model, const ModelMeta& meta) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open " + path + " for writing");
    save_model(out, model, meta);
}

inline ModelFile load_model_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open model file " + path);
    return load_model(in);
}

}  // namespace phenoicu
