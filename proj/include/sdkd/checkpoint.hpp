#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "sdkd/models.hpp"

namespace sdkd::nn {

// On-disk checkpoint: manifest.json describing the model spec and every
// tensor (name, shape, dtype, file, crc32) plus one raw little-endian blob
// per tensor. Training state (parameters, optimizer moments) is stored as
// f64 so save -> load -> resume is exact; f32 is available for exports.
struct Checkpoint {
    ModelSpec spec;
    std::vector<std::pair<std::string, Tensor>> tensors;
    std::string extra_json = "{}";  // optimizer scalars, epoch counters, ...
};

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ck,
                     const std::string& dtype = "f64");
Checkpoint load_checkpoint(const std::filesystem::path& dir);

// copies "param/<name>" tensors into the model; the spec must match exactly
void load_into_model(Model& model, const Checkpoint& ck);

Checkpoint checkpoint_of_model(const Model& model);

}  // namespace sdkd::nn
