#include "ftea/dataset.hpp"

#include "ftea/errors.hpp"
#include "ftea/image_io.hpp"

namespace ftea {

Dataset Dataset::open(const std::filesystem::path& dir, bool with_labels) {
    const auto manifest = read_manifest(dir / "manifest.json");
    Dataset ds;
    ds.with_labels_ = with_labels;
    ds.height_ = manifest.height;
    ds.width_ = manifest.width;
    for (const auto& entry : manifest.samples) {
        SceneInput in;
        in.rgb = read_ppm(dir / entry.rgb);
        const Pgm16 d = read_pgm16(dir / entry.depth);
        if (d.height != manifest.height || d.width != manifest.width ||
            in.rgb.dim(1) != manifest.height || in.rgb.dim(2) != manifest.width)
            throw io_error("dataset: image dims disagree with manifest for '" + entry.rgb + "'");
        in.depth = Tensor({1, d.height, d.width});
        for (size_t i = 0; i < d.values.size(); ++i)
            in.depth[static_cast<long long>(i)] = static_cast<double>(d.values[i]);
        ds.inputs_.push_back(std::move(in));
        if (with_labels) ds.labels_.push_back(read_mask_pgm(dir / entry.labels));
    }
    return ds;
}

const InstanceLabeling& Dataset::labels(size_t i) const {
    if (!with_labels_)
        throw internal_error("Dataset: label access on a dataset opened without labels");
    return labels_.at(i);
}

}  // namespace ftea
