#pragma once

#include <string>

#include "rfedit/checkpoint.hpp"
#include "rfedit/model.hpp"

namespace rfedit {

inline Checkpoint to_checkpoint(Model& model) {
    Checkpoint ckpt;
    ckpt.config = model.cfg;
    for (auto& [name, t] : model.named_params()) {
        TensorEntry e;
        e.name = name;
        e.shape = t->shape;
        e.data = *t->data;
        ckpt.tensors.push_back(std::move(e));
    }
    return ckpt;
}

inline Model model_from_checkpoint(const Checkpoint& ckpt) {
    ckpt.config.validate();
    Rng rng(0);
    Model model = Model::init(ckpt.config, rng);
    auto params = model.named_params();
    if (params.size() != ckpt.tensors.size())
        throw CheckpointError(CheckpointError::Kind::kBadHeader,
                              "tensor count mismatch: expected " + std::to_string(params.size()) +
                                  ", found " + std::to_string(ckpt.tensors.size()));
    for (size_t i = 0; i < params.size(); ++i) {
        auto& [name, t] = params[i];
        const auto& e = ckpt.tensors[i];
        if (e.name != name)
            throw CheckpointError(CheckpointError::Kind::kBadHeader,
                                  "unexpected tensor order: found " + e.name + ", expected " + name);
        if (e.shape != t->shape)
            throw CheckpointError(CheckpointError::Kind::kBadHeader, "shape mismatch for " + name);
        *t->data = e.data;
    }
    return model;
}

inline void save_model(const std::string& path, Model& model) {
    Checkpoint ckpt = to_checkpoint(model);
    save_checkpoint(path, ckpt);
}

inline Model load_model(const std::string& path) { return model_from_checkpoint(load_checkpoint(path)); }

}  // namespace rfedit
