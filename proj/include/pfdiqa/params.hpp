#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "pfdiqa/rng.hpp"

namespace pfd {

struct Slot {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Flat parameter storage. Every trainable tensor of a model lives in one
// contiguous double buffer so the optimizer, gradient clipping, checkpoint
// serialization and content hashing all operate on a single span.
class ParamStore {
public:
    using MapMat = Eigen::Map<Eigen::MatrixXd>;
    using ConstMapMat = Eigen::Map<const Eigen::MatrixXd>;

    Slot add(const std::string& name, int rows, int cols);

    MapMat mat(Slot s);
    ConstMapMat mat(Slot s) const;
    MapMat mat(const std::string& name);
    ConstMapMat mat(const std::string& name) const;
    bool has(const std::string& name) const { return by_name_.count(name) > 0; }
    Slot slot(const std::string& name) const;

    int rows(Slot s) const { return entries_[s.id].rows; }
    int cols(Slot s) const { return entries_[s.id].cols; }
    int offset(Slot s) const { return entries_[s.id].offset; }
    const std::string& name(Slot s) const { return entries_[s.id].name; }
    int count(Slot s) const { return entries_[s.id].rows * entries_[s.id].cols; }

    std::size_t size() const { return data_.size(); }
    std::size_t num_tensors() const { return entries_.size(); }
    std::span<double> flat() { return data_; }
    std::span<const double> flat() const { return data_; }

    void fill(Slot s, double v);
    void init_gaussian(Slot s, Rng& rng, double stddev);

    std::uint64_t content_hash() const;

    struct Entry {
        std::string name;
        int offset = 0;
        int rows = 0;
        int cols = 0;
    };
    const std::vector<Entry>& entries() const { return entries_; }

private:
    std::vector<double> data_;
    std::vector<Entry> entries_;
    std::unordered_map<std::string, int> by_name_;
};

// Decoupled weight-decay Adam over a flat parameter span.
class AdamW {
public:
    AdamW(std::size_t n, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : m_(n, 0.0), v_(n, 0.0), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(std::span<double> w, std::span<const double> g, double lr, double weight_decay);
    int steps_taken() const { return t_; }

private:
    std::vector<double> m_, v_;
    double beta1_, beta2_, eps_;
    int t_ = 0;
};

// Scales grad in place so its global L2 norm is at most max_norm (no-op if
// max_norm <= 0). Returns the pre-clip norm.
double clip_grad_norm(std::vector<double>& grad, double max_norm);

}  // namespace pfd
