#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "debias/matrix.hpp"
#include "debias/nn.hpp"

namespace debias {

// Self-describing checkpoint container. Layout (all integers little-endian):
//   magic   "DBCK"            4 bytes
//   version u32               currently 1
//   hlen    u64               header length in bytes
//   header  UTF-8 JSON        config, vocab hash, seed, step, stage metadata
//   count   u64               number of arrays
//   per array:
//     nlen  u64, name bytes
//     rows  u64, cols u64
//     data  rows*cols float32 little-endian
// The format is documented in docs/checkpoint-format.md and is stable.
struct Checkpoint {
    std::string header_json;
    struct Array {
        std::string name;
        std::size_t rows = 0, cols = 0;
        std::vector<float> data;
    };
    std::vector<Array> arrays;

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);

    const Array* find(const std::string& name) const;
};

// Snapshot / restore of a model's parameter list.
template <typename Real>
Checkpoint make_checkpoint(const std::vector<ParamRef<Real>>& params,
                           const std::string& header_json);

template <typename Real>
void restore_params(const Checkpoint& ckpt, const std::vector<ParamRef<Real>>& params);

}  // namespace debias
