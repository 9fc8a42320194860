#pragma once

#include <filesystem>
#include <vector>

#include "ftea/metrics.hpp"
#include "ftea/scenegen.hpp"
#include "ftea/tensor.hpp"

namespace ftea {

struct SceneInput {
    Tensor rgb;    // [3,H,W] in [0,1]
    Tensor depth;  // [1,H,W] millimeters
};

// Reader over a generated dataset directory. When opened without label
// access the label files are never opened; asking for labels anyway is an
// internal error, which is how the adaptation path enforces that it stays
// unsupervised.
class Dataset {
public:
    static Dataset open(const std::filesystem::path& dir, bool with_labels);

    size_t size() const { return inputs_.size(); }
    int height() const { return height_; }
    int width() const { return width_; }
    const SceneInput& input(size_t i) const { return inputs_.at(i); }
    const InstanceLabeling& labels(size_t i) const;
    bool has_labels() const { return with_labels_; }

private:
    std::vector<SceneInput> inputs_;
    std::vector<InstanceLabeling> labels_;
    bool with_labels_ = false;
    int height_ = 0, width_ = 0;
};

}  // namespace ftea
