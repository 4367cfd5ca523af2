#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "lmn/common.hpp"
#include "lmn/prng.hpp"

namespace lmn {

// Named parameters with co-shaped gradient and Adam moment buffers.
// Single-writer: one trainer owns a ParamStore at a time.
class ParamStore {
public:
    struct Entry {
        std::string name;
        Matrix value;
        Vec grad;  // flat, rows*cols
        Vec m;     // Adam first moment
        Vec v;     // Adam second moment
    };

    int add(const std::string& name, int rows, int cols) {
        require(index_.find(name) == index_.end(), "ParamStore: duplicate parameter name");
        Entry e;
        e.name = name;
        e.value = Matrix(rows, cols);
        e.grad.assign(e.value.size(), 0.0);
        e.m.assign(e.value.size(), 0.0);
        e.v.assign(e.value.size(), 0.0);
        entries_.push_back(std::move(e));
        int id = static_cast<int>(entries_.size()) - 1;
        index_[name] = id;
        return id;
    }

    int add_uniform(const std::string& name, int rows, int cols, Prng& rng, double scale) {
        int id = add(name, rows, cols);
        for (double& x : entries_[static_cast<size_t>(id)].value.a) x = rng.uniform(-scale, scale);
        return id;
    }

    // Glorot-style scale for a rows x cols weight.
    int add_glorot(const std::string& name, int rows, int cols, Prng& rng) {
        return add_uniform(name, rows, cols, rng, std::sqrt(6.0 / (rows + cols)));
    }

    int id(const std::string& name) const {
        auto it = index_.find(name);
        require(it != index_.end(), "ParamStore: unknown parameter name");
        return it->second;
    }
    bool has(const std::string& name) const { return index_.find(name) != index_.end(); }

    Entry& entry(int id) { return entries_[static_cast<size_t>(id)]; }
    const Entry& entry(int id) const { return entries_[static_cast<size_t>(id)]; }
    Entry& entry(const std::string& name) { return entries_[static_cast<size_t>(id(name))]; }
    const Entry& entry(const std::string& name) const { return entries_[static_cast<size_t>(id(name))]; }

    Matrix& value(const std::string& name) { return entry(name).value; }
    const Matrix& value(const std::string& name) const { return entry(name).value; }

    size_t count() const { return entries_.size(); }
    int64_t step() const { return step_; }

    void zero_grad() {
        for (auto& e : entries_)
            for (double& g : e.grad) g = 0.0;
    }

    // Bias-corrected Adam. Gradients are zeroed after a successful update; a
    // non-finite gradient rejects the whole step and names the parameter.
    void adam_step(double lr, double beta1, double beta2, double eps) {
        for (const auto& e : entries_)
            for (double g : e.grad)
                if (!std::isfinite(g))
                    throw std::runtime_error("adam_step: non-finite gradient in parameter '" + e.name + "'");
        ++step_;
        double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_));
        double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_));
        for (auto& e : entries_) {
            for (size_t i = 0; i < e.grad.size(); ++i) {
                double g = e.grad[i];
                e.m[i] = beta1 * e.m[i] + (1.0 - beta1) * g;
                e.v[i] = beta2 * e.v[i] + (1.0 - beta2) * g * g;
                double mhat = e.m[i] / bc1;
                double vhat = e.v[i] / bc2;
                e.value.a[i] -= lr * mhat / (std::sqrt(vhat) + eps);
                e.grad[i] = 0.0;
            }
        }
    }

    // FNV-1a over the raw bytes of every parameter value, in entry order.
    // Used to assert the freezing contract across online sessions.
    uint64_t checksum() const {
        uint64_t h = 0xCBF29CE484222325ULL;
        auto mix = [&h](const void* p, size_t n) {
            const auto* b = static_cast<const unsigned char*>(p);
            for (size_t i = 0; i < n; ++i) {
                h ^= b[i];
                h *= 0x100000001B3ULL;
            }
        };
        for (const auto& e : entries_) {
            mix(e.name.data(), e.name.size());
            mix(e.value.a.data(), e.value.a.size() * sizeof(double));
        }
        return h;
    }

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, int> index_;
    int64_t step_ = 0;
};

}  // namespace lmn
