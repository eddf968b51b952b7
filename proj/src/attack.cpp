#include "expertleak/attack.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

namespace expertleak::attack {

namespace {

void softmax_cols(Eigen::MatrixXd& z) {
    for (Eigen::Index c = 0; c < z.cols(); ++c) {
        auto col = z.col(c);
        col.array() -= col.maxCoeff();
        col = col.array().exp();
        col /= col.sum();
    }
}

Eigen::MatrixXd to_cols(const std::vector<std::vector<double>>& x) {
    if (x.empty()) throw AttackError("empty feature set");
    const Eigen::Index d = static_cast<Eigen::Index>(x[0].size());
    Eigen::MatrixXd m(d, static_cast<Eigen::Index>(x.size()));
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (static_cast<Eigen::Index>(x[i].size()) != d)
            throw AttackError("ragged feature set");
        m.col(static_cast<Eigen::Index>(i)) =
            Eigen::Map<const Eigen::VectorXd>(x[i].data(), d);
    }
    return m;
}

void check_dataset(const Dataset& data) {
    if (data.x.empty() || data.x.size() != data.y.size())
        throw AttackError("dataset features/labels mismatch");
    if (data.classes < 2) throw AttackError("need at least 2 classes");
    for (int label : data.y)
        if (label < 0 || label >= data.classes)
            throw AttackError("label out of range");
    int first = data.y[0];
    bool mixed = false;
    for (int label : data.y) mixed = mixed || label != first;
    if (!mixed) throw AttackError("training labels are single-class");
}

Eigen::MatrixXd glorot(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    const double scale = std::sqrt(6.0 / static_cast<double>(rows + cols));
    Eigen::MatrixXd w(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i)
            w(i, j) = (2.0 * rng.uniform() - 1.0) * scale;
    return w;
}

void shuffle_indices(std::vector<int>& idx, Rng& rng) {
    for (std::size_t i = idx.size(); i > 1; --i)
        std::swap(idx[i - 1], idx[rng.uniform_int(i)]);
}

std::size_t append_flat(std::vector<double>& out, const Eigen::MatrixXd& m) {
    // column-major, matching Eigen storage
    out.insert(out.end(), m.data(), m.data() + m.size());
    return static_cast<std::size_t>(m.size());
}

void take_flat(Eigen::MatrixXd& m, const std::vector<double>& p, std::size_t& pos) {
    if (pos + static_cast<std::size_t>(m.size()) > p.size())
        throw AttackError("parameter vector too short");
    std::memcpy(m.data(), p.data() + pos, sizeof(double) * m.size());
    pos += static_cast<std::size_t>(m.size());
}

void take_flat(Eigen::VectorXd& v, const std::vector<double>& p, std::size_t& pos) {
    if (pos + static_cast<std::size_t>(v.size()) > p.size())
        throw AttackError("parameter vector too short");
    std::memcpy(v.data(), p.data() + pos, sizeof(double) * v.size());
    pos += static_cast<std::size_t>(v.size());
}

struct Forward {
    Eigen::MatrixXd x, a1, a2, probs;
};

Forward pia_forward(const PiaModel& m, const Eigen::MatrixXd& x) {
    Forward f;
    f.x = x;
    f.a1 = ((m.w1 * x).colwise() + m.b1).cwiseMax(0.0);
    f.a2 = ((m.w2 * f.a1).colwise() + m.b2).cwiseMax(0.0);
    f.probs = (m.w3 * f.a2).colwise() + m.b3;
    softmax_cols(f.probs);
    return f;
}

double ce_of(const Eigen::MatrixXd& probs, const std::vector<int>& y,
             const std::vector<int>* subset = nullptr) {
    double loss = 0.0;
    const Eigen::Index n = probs.cols();
    for (Eigen::Index c = 0; c < n; ++c) {
        const int label = subset ? y[(*subset)[c]] : y[c];
        loss -= std::log(std::max(probs(label, c), 1e-300));
    }
    return loss / static_cast<double>(n);
}

// dL/dlogits for mean cross-entropy: (probs - onehot) / n.
Eigen::MatrixXd ce_delta(const Eigen::MatrixXd& probs, const std::vector<int>& y,
                         const std::vector<int>* subset = nullptr) {
    Eigen::MatrixXd d = probs;
    const Eigen::Index n = probs.cols();
    for (Eigen::Index c = 0; c < n; ++c) {
        const int label = subset ? y[(*subset)[c]] : y[c];
        d(label, c) -= 1.0;
    }
    d /= static_cast<double>(n);
    return d;
}

const char* kModelMagic = "#model";

void write_doubles(std::ofstream& out, const double* p, std::size_t n) {
    // assumes a little-endian host, checked at startup below
    out.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * 8));
}

void read_doubles(std::ifstream& in, double* p, std::size_t n) {
    in.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n * 8));
    if (!in) throw AttackError("model blob truncated");
}

struct EndianCheck {
    EndianCheck() {
        const std::uint16_t probe = 1;
        if (*reinterpret_cast<const std::uint8_t*>(&probe) != 1)
            throw AttackError("big-endian hosts are not supported by model blobs");
    }
} endian_check;

std::vector<int> parse_dims(const std::string& header, const std::string& kind) {
    std::istringstream ss(header);
    std::string field;
    bool kind_ok = false;
    std::vector<int> dims;
    while (std::getline(ss, field, ',')) {
        if (field == "kind=" + kind) kind_ok = true;
        if (field.rfind("dims=", 0) == 0) {
            std::istringstream ds(field.substr(5));
            std::string d;
            while (std::getline(ds, d, 'x')) dims.push_back(std::stoi(d));
        }
    }
    if (!kind_ok) throw AttackError("model blob kind mismatch, wanted " + kind);
    return dims;
}

} // namespace

std::vector<double> featurize_load(const std::vector<std::vector<long>>& load) {
    if (load.empty()) throw AttackError("featurize_load: no layers");
    std::vector<double> out;
    for (const auto& layer : load) {
        long total = std::accumulate(layer.begin(), layer.end(), 0L);
        if (total <= 0) throw AttackError("featurize_load: empty layer load");
        for (long c : layer) out.push_back(static_cast<double>(c) / total);
    }
    return out;
}

std::vector<double> featurize_load_props(const std::vector<std::vector<double>>& props) {
    if (props.empty()) throw AttackError("featurize_load_props: no layers");
    std::vector<double> out;
    for (const auto& layer : props) {
        double total = std::accumulate(layer.begin(), layer.end(), 0.0);
        if (total <= 0.0) throw AttackError("featurize_load_props: empty layer");
        for (double p : layer) out.push_back(p / total);
    }
    return out;
}

std::vector<double> featurize_seq(const std::vector<std::vector<std::uint8_t>>& masks) {
    if (masks.empty()) throw AttackError("featurize_seq: no layers");
    std::vector<double> out;
    for (const auto& layer : masks)
        for (std::uint8_t b : layer) out.push_back(b ? 1.0 : 0.0);
    return out;
}

std::vector<double> PiaModel::infer(const std::vector<double>& x) const {
    if (static_cast<int>(x.size()) != input())
        throw AttackError("infer: feature dimension mismatch");
    Eigen::VectorXd v = Eigen::Map<const Eigen::VectorXd>(x.data(), input());
    v = (v - mean).cwiseQuotient(scale);
    auto f = pia_forward(*this, v);
    return {f.probs.data(), f.probs.data() + f.probs.size()};
}

Eigen::MatrixXd PiaModel::infer_batch(const Eigen::MatrixXd& x_cols) const {
    Eigen::MatrixXd z = (x_cols.colwise() - mean).array().colwise() / scale.array();
    return pia_forward(*this, z).probs;
}

PiaModel init_pia(int input, int h1, int h2, int classes, std::uint64_t seed) {
    if (input < 1 || h1 < 1 || h2 < 1 || classes < 2)
        throw AttackError("init_pia: bad dimensions");
    Rng rng(seed);
    PiaModel m;
    m.w1 = glorot(h1, input, rng);
    m.w2 = glorot(h2, h1, rng);
    m.w3 = glorot(classes, h2, rng);
    m.b1 = Eigen::VectorXd::Zero(h1);
    m.b2 = Eigen::VectorXd::Zero(h2);
    m.b3 = Eigen::VectorXd::Zero(classes);
    m.mean = Eigen::VectorXd::Zero(input);
    m.scale = Eigen::VectorXd::Ones(input);
    return m;
}

PiaModel train_pia(const Dataset& train, const PiaHyper& hyper) {
    check_dataset(train);
    Eigen::MatrixXd x = to_cols(train.x);
    const int n = static_cast<int>(x.cols());

    PiaModel m = init_pia(static_cast<int>(x.rows()), hyper.hidden1, hyper.hidden2,
                          train.classes, hyper.seed);
    m.mean = x.rowwise().mean();
    Eigen::MatrixXd centered = x.colwise() - m.mean;
    m.scale = (centered.array().square().rowwise().sum() / std::max(1, n - 1))
                  .sqrt()
                  .max(1e-8)
                  .matrix();
    Eigen::MatrixXd z = centered.array().colwise() / m.scale.array();

    Eigen::MatrixXd vw1 = Eigen::MatrixXd::Zero(m.w1.rows(), m.w1.cols());
    Eigen::MatrixXd vw2 = Eigen::MatrixXd::Zero(m.w2.rows(), m.w2.cols());
    Eigen::MatrixXd vw3 = Eigen::MatrixXd::Zero(m.w3.rows(), m.w3.cols());
    Eigen::VectorXd vb1 = Eigen::VectorXd::Zero(m.b1.size());
    Eigen::VectorXd vb2 = Eigen::VectorXd::Zero(m.b2.size());
    Eigen::VectorXd vb3 = Eigen::VectorXd::Zero(m.b3.size());

    Rng order_rng = Rng::derive(hyper.seed, 0xD1);
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);

    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        shuffle_indices(idx, order_rng);
        for (int start = 0; start < n; start += hyper.batch) {
            const int bs = std::min(hyper.batch, n - start);
            Eigen::MatrixXd xb(z.rows(), bs);
            std::vector<int> subset(bs);
            for (int j = 0; j < bs; ++j) {
                subset[j] = idx[start + j];
                xb.col(j) = z.col(subset[j]);
            }
            Forward f = pia_forward(m, xb);
            Eigen::MatrixXd d3 = ce_delta(f.probs, train.y, &subset);
            Eigen::MatrixXd d2 = (m.w3.transpose() * d3).array() *
                                 (f.a2.array() > 0.0).cast<double>();
            Eigen::MatrixXd d1 = (m.w2.transpose() * d2).array() *
                                 (f.a1.array() > 0.0).cast<double>();

            vw3 = hyper.momentum * vw3 - hyper.lr * (d3 * f.a2.transpose());
            vb3 = hyper.momentum * vb3 - hyper.lr * d3.rowwise().sum();
            vw2 = hyper.momentum * vw2 - hyper.lr * (d2 * f.a1.transpose());
            vb2 = hyper.momentum * vb2 - hyper.lr * d2.rowwise().sum();
            vw1 = hyper.momentum * vw1 - hyper.lr * (d1 * xb.transpose());
            vb1 = hyper.momentum * vb1 - hyper.lr * d1.rowwise().sum();
            m.w3 += vw3;
            m.b3 += vb3;
            m.w2 += vw2;
            m.b2 += vb2;
            m.w1 += vw1;
            m.b1 += vb1;
        }
        if (!m.w1.allFinite() || !m.w2.allFinite() || !m.w3.allFinite())
            throw AttackError("train_pia: diverged (non-finite parameters)");
    }
    return m;
}

double pia_loss(const PiaModel& m, const Dataset& batch) {
    check_dataset(batch);
    return ce_of(pia_forward(m, to_cols(batch.x)).probs, batch.y);
}

std::vector<double> pia_gradient(const PiaModel& m, const Dataset& batch) {
    check_dataset(batch);
    Eigen::MatrixXd x = to_cols(batch.x);
    Forward f = pia_forward(m, x);
    Eigen::MatrixXd d3 = ce_delta(f.probs, batch.y);
    Eigen::MatrixXd d2 =
        (m.w3.transpose() * d3).array() * (f.a2.array() > 0.0).cast<double>();
    Eigen::MatrixXd d1 =
        (m.w2.transpose() * d2).array() * (f.a1.array() > 0.0).cast<double>();

    std::vector<double> g;
    append_flat(g, d1 * x.transpose());
    append_flat(g, d1.rowwise().sum());
    append_flat(g, d2 * f.a1.transpose());
    append_flat(g, d2.rowwise().sum());
    append_flat(g, d3 * f.a2.transpose());
    append_flat(g, d3.rowwise().sum());
    return g;
}

std::vector<double> pia_parameters(const PiaModel& m) {
    std::vector<double> p;
    append_flat(p, m.w1);
    append_flat(p, m.b1);
    append_flat(p, m.w2);
    append_flat(p, m.b2);
    append_flat(p, m.w3);
    append_flat(p, m.b3);
    return p;
}

void pia_set_parameters(PiaModel& m, const std::vector<double>& p) {
    std::size_t pos = 0;
    take_flat(m.w1, p, pos);
    take_flat(m.b1, p, pos);
    take_flat(m.w2, p, pos);
    take_flat(m.b2, p, pos);
    take_flat(m.w3, p, pos);
    take_flat(m.b3, p, pos);
    if (pos != p.size()) throw AttackError("parameter vector too long");
}

std::vector<double> RraModel::infer(const std::vector<double>& x) const {
    if (static_cast<int>(x.size()) != input())
        throw AttackError("infer: feature dimension mismatch");
    Eigen::MatrixXd probs =
        infer_batch(Eigen::Map<const Eigen::VectorXd>(x.data(), input()));
    return {probs.data(), probs.data() + probs.size()};
}

Eigen::MatrixXd RraModel::infer_batch(const Eigen::MatrixXd& x_cols) const {
    Eigen::MatrixXd z = (w * x_cols).colwise() + b;
    softmax_cols(z);
    return z;
}

RraModel train_rra(const Dataset& train, const RraHyper& hyper) {
    check_dataset(train);
    Eigen::MatrixXd x = to_cols(train.x);
    const int n = static_cast<int>(x.cols());

    RraModel m;
    m.w = Eigen::MatrixXd::Zero(train.classes, x.rows());
    m.b = Eigen::VectorXd::Zero(train.classes);
    Eigen::MatrixXd vw = m.w;
    Eigen::VectorXd vb = m.b;

    Rng order_rng = Rng::derive(hyper.seed, 0xD2);
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);

    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        shuffle_indices(idx, order_rng);
        for (int start = 0; start < n; start += hyper.batch) {
            const int bs = std::min(hyper.batch, n - start);
            Eigen::MatrixXd xb(x.rows(), bs);
            std::vector<int> subset(bs);
            for (int j = 0; j < bs; ++j) {
                subset[j] = idx[start + j];
                xb.col(j) = x.col(subset[j]);
            }
            Eigen::MatrixXd probs = m.infer_batch(xb);
            Eigen::MatrixXd d = ce_delta(probs, train.y, &subset);
            vw = hyper.momentum * vw -
                 hyper.lr * (d * xb.transpose() + hyper.lambda * m.w);
            vb = hyper.momentum * vb - hyper.lr * d.rowwise().sum();
            m.w += vw;
            m.b += vb;
        }
        if (!m.w.allFinite())
            throw AttackError("train_rra: diverged (non-finite parameters)");
    }
    return m;
}

double rra_loss(const RraModel& m, const Dataset& batch, double lambda) {
    check_dataset(batch);
    const double ce = ce_of(m.infer_batch(to_cols(batch.x)), batch.y);
    return ce + 0.5 * lambda * m.w.squaredNorm();
}

std::vector<double> rra_gradient(const RraModel& m, const Dataset& batch,
                                 double lambda) {
    check_dataset(batch);
    Eigen::MatrixXd x = to_cols(batch.x);
    Eigen::MatrixXd d = ce_delta(m.infer_batch(x), batch.y);
    std::vector<double> g;
    append_flat(g, Eigen::MatrixXd(d * x.transpose() + lambda * m.w));
    append_flat(g, d.rowwise().sum());
    return g;
}

std::vector<double> rra_parameters(const RraModel& m) {
    std::vector<double> p;
    append_flat(p, m.w);
    append_flat(p, m.b);
    return p;
}

void rra_set_parameters(RraModel& m, const std::vector<double>& p) {
    std::size_t pos = 0;
    take_flat(m.w, p, pos);
    take_flat(m.b, p, pos);
    if (pos != p.size()) throw AttackError("parameter vector too long");
}

moe::TokenSequence reconstruct_response(const RraModel& m,
                                        const std::vector<std::vector<double>>& features) {
    moe::TokenSequence out;
    out.reserve(features.size());
    for (const auto& f : features) {
        auto scores = m.infer(f);
        out.push_back(static_cast<int>(
            std::max_element(scores.begin(), scores.end()) - scores.begin()));
    }
    return out;
}

namespace {

template <class M>
double top1_impl(const M& m, const Dataset& data) {
    if (data.x.empty() || data.x.size() != data.y.size())
        throw AttackError("evaluation dataset mismatch");
    Eigen::MatrixXd probs = m.infer_batch(to_cols(data.x));
    int hits = 0;
    for (Eigen::Index c = 0; c < probs.cols(); ++c) {
        Eigen::Index best = 0;
        probs.col(c).maxCoeff(&best);
        hits += static_cast<int>(best) == data.y[c];
    }
    return static_cast<double>(hits) / static_cast<double>(probs.cols());
}

} // namespace

double top1_accuracy(const PiaModel& m, const Dataset& data) { return top1_impl(m, data); }
double top1_accuracy(const RraModel& m, const Dataset& data) { return top1_impl(m, data); }

std::vector<std::vector<double>> scores_of(const PiaModel& m, const Dataset& data) {
    Eigen::MatrixXd probs = m.infer_batch(to_cols(data.x));
    std::vector<std::vector<double>> out(probs.cols());
    for (Eigen::Index c = 0; c < probs.cols(); ++c)
        out[c].assign(probs.col(c).data(), probs.col(c).data() + probs.rows());
    return out;
}

std::vector<std::vector<double>> cross_evaluate(const std::vector<RraModel>& models,
                                                const std::vector<Dataset>& datasets) {
    std::vector<std::vector<double>> grid(models.size());
    for (std::size_t i = 0; i < models.size(); ++i) {
        grid[i].resize(datasets.size());
        for (std::size_t j = 0; j < datasets.size(); ++j)
            grid[i][j] = top1_accuracy(models[i], datasets[j]);
    }
    return grid;
}

void write_pia_model(const std::string& path, const PiaModel& m) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw AttackError("cannot open " + path);
    char header[128];
    std::snprintf(header, sizeof header, "%s,kind=pia,dims=%dx%dx%dx%d\n",
                  kModelMagic, m.input(), static_cast<int>(m.w1.rows()),
                  static_cast<int>(m.w2.rows()), m.classes());
    out << header;
    for (const Eigen::MatrixXd* w : {&m.w1, &m.w2, &m.w3})
        write_doubles(out, w->data(), static_cast<std::size_t>(w->size()));
    for (const Eigen::VectorXd* v : {&m.b1, &m.b2, &m.b3, &m.mean, &m.scale})
        write_doubles(out, v->data(), static_cast<std::size_t>(v->size()));
    if (!out) throw AttackError("write failed: " + path);
}

PiaModel read_pia_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw AttackError("cannot open " + path);
    std::string header;
    std::getline(in, header);
    if (header.rfind(kModelMagic, 0) != 0)
        throw AttackError("not a model blob: " + path);
    auto dims = parse_dims(header, "pia");
    if (dims.size() != 4) throw AttackError("pia blob needs 4 dims");
    PiaModel m = init_pia(dims[0], dims[1], dims[2], dims[3], 0);
    for (Eigen::MatrixXd* w : {&m.w1, &m.w2, &m.w3})
        read_doubles(in, w->data(), static_cast<std::size_t>(w->size()));
    for (Eigen::VectorXd* v : {&m.b1, &m.b2, &m.b3, &m.mean, &m.scale})
        read_doubles(in, v->data(), static_cast<std::size_t>(v->size()));
    return m;
}

void write_rra_model(const std::string& path, const RraModel& m) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw AttackError("cannot open " + path);
    char header[96];
    std::snprintf(header, sizeof header, "%s,kind=rra,dims=%dx%d\n", kModelMagic,
                  m.input(), m.classes());
    out << header;
    write_doubles(out, m.w.data(), static_cast<std::size_t>(m.w.size()));
    write_doubles(out, m.b.data(), static_cast<std::size_t>(m.b.size()));
    if (!out) throw AttackError("write failed: " + path);
}

RraModel read_rra_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw AttackError("cannot open " + path);
    std::string header;
    std::getline(in, header);
    if (header.rfind(kModelMagic, 0) != 0)
        throw AttackError("not a model blob: " + path);
    auto dims = parse_dims(header, "rra");
    if (dims.size() != 2) throw AttackError("rra blob needs 2 dims");
    RraModel m;
    m.w.resize(dims[1], dims[0]);
    m.b.resize(dims[1]);
    read_doubles(in, m.w.data(), static_cast<std::size_t>(m.w.size()));
    read_doubles(in, m.b.data(), static_cast<std::size_t>(m.b.size()));
    return m;
}

} // namespace expertleak::attack
