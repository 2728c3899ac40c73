#include "pfdiqa/params.hpp"

#include <cmath>

#include "pfdiqa/errors.hpp"
#include "pfdiqa/hash.hpp"

namespace pfd {

Slot ParamStore::add(const std::string& name, int rows, int cols) {
    if (rows <= 0 || cols <= 0)
        throw ArgumentError("parameter '" + name + "' must have positive shape");
    if (by_name_.count(name))
        throw ArgumentError("duplicate parameter name '" + name + "'");
    Entry e;
    e.name = name;
    e.offset = static_cast<int>(data_.size());
    e.rows = rows;
    e.cols = cols;
    data_.resize(data_.size() + static_cast<std::size_t>(rows) * cols, 0.0);
    int id = static_cast<int>(entries_.size());
    entries_.push_back(std::move(e));
    by_name_[name] = id;
    return Slot{id};
}

ParamStore::MapMat ParamStore::mat(Slot s) {
    const Entry& e = entries_.at(s.id);
    return MapMat(data_.data() + e.offset, e.rows, e.cols);
}

ParamStore::ConstMapMat ParamStore::mat(Slot s) const {
    const Entry& e = entries_.at(s.id);
    return ConstMapMat(data_.data() + e.offset, e.rows, e.cols);
}

ParamStore::MapMat ParamStore::mat(const std::string& name) { return mat(slot(name)); }
ParamStore::ConstMapMat ParamStore::mat(const std::string& name) const { return mat(slot(name)); }

Slot ParamStore::slot(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end())
        throw ArgumentError("unknown parameter name '" + name + "'");
    return Slot{it->second};
}

void ParamStore::fill(Slot s, double v) { mat(s).setConstant(v); }

void ParamStore::init_gaussian(Slot s, Rng& rng, double stddev) {
    auto m = mat(s);
    for (int c = 0; c < m.cols(); ++c)
        for (int r = 0; r < m.rows(); ++r)
            m(r, c) = stddev * rng.normal();
}

std::uint64_t ParamStore::content_hash() const {
    Hasher h;
    h.update_u64(entries_.size());
    for (const Entry& e : entries_) {
        h.update(e.name.data(), e.name.size());
        h.update_u64(static_cast<std::uint64_t>(e.rows));
        h.update_u64(static_cast<std::uint64_t>(e.cols));
    }
    for (double d : data_) h.update_double(d);
    return h.digest();
}

void AdamW::step(std::span<double> w, std::span<const double> g, double lr, double weight_decay) {
    if (w.size() != m_.size() || g.size() != m_.size())
        throw ArgumentError("AdamW step: size mismatch with optimizer state");
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t i = 0; i < w.size(); ++i) {
        m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g[i];
        v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g[i] * g[i];
        const double mhat = m_[i] / bc1;
        const double vhat = v_[i] / bc2;
        w[i] -= lr * (mhat / (std::sqrt(vhat) + eps_) + weight_decay * w[i]);
    }
}

double clip_grad_norm(std::vector<double>& grad, double max_norm) {
    double sq = 0.0;
    for (double g : grad) sq += g * g;
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm && norm > 0.0) {
        const double scale = max_norm / norm;
        for (double& g : grad) g *= scale;
    }
    return norm;
}

}  // namespace pfd
