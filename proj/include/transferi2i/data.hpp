#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

namespace transferi2i::data {

enum class Split { train, test };

std::string to_string(Split split);

struct Batch {
    torch::Tensor images;  // (B, 3, H, W) float in [-1, 1]
    torch::Tensor labels;  // (B,) int64
};

/// Read interface every training loop consumes data through.
class ImageSource {
public:
    virtual ~ImageSource() = default;
    virtual int64_t size() const = 0;
    virtual Batch fetch(std::span<const int64_t> indices) const = 0;
    virtual int64_t image_size() const = 0;
    virtual std::string describe() const = 0;
};

/// While alive, any read through a Corpus on this thread throws ContractViolation.
class DataFreeScope {
public:
    explicit DataFreeScope(std::string stage);
    ~DataFreeScope();
    DataFreeScope(const DataFreeScope&) = delete;
    DataFreeScope& operator=(const DataFreeScope&) = delete;
};

/// Throws ContractViolation when called inside a DataFreeScope.
void guard_read(const std::string& what);

/// Process-wide count of guarded dataset reads, for instrumentation.
int64_t dataset_reads();

class Corpus final : public ImageSource {
public:
    Corpus() = default;
    Corpus(torch::Tensor images, std::vector<int64_t> labels, Split split,
           std::vector<std::string> paths = {});

    int64_t size() const override { return static_cast<int64_t>(labels_.size()); }
    Batch fetch(std::span<const int64_t> indices) const override;
    int64_t image_size() const override { return images_.defined() ? images_.size(3) : 0; }
    std::string describe() const override;

    /// Every image, guarded like fetch().
    const torch::Tensor& images() const;
    const std::vector<int64_t>& labels() const { return labels_; }
    const std::vector<std::string>& paths() const { return paths_; }
    Split split() const { return split_; }

    int64_t num_classes() const;
    std::vector<int64_t> class_histogram() const;

    Corpus select(std::span<const int64_t> indices) const;
    Corpus select_class(int64_t label) const;
    /// Same images with every label replaced by `label`.
    Corpus relabeled(int64_t label) const;
    static Corpus concat(const Corpus& a, const Corpus& b);

private:
    torch::Tensor images_;
    std::vector<int64_t> labels_;
    std::vector<std::string> paths_;
    Split split_ = Split::train;
};

/// Uniform draw of `batch` indices (with replacement) from `gen`.
Batch sample_batch(const ImageSource& source, int64_t batch, torch::Generator& gen);

/// uint8 (N,3,H,W) -> float in [-1, 1].
torch::Tensor normalize(const torch::Tensor& pixels);
/// float in [-1, 1] -> uint8, exact inverse of normalize() on 8-bit input.
torch::Tensor denormalize(const torch::Tensor& images);

/// Folder-per-class loader: class labels follow the sorted subdirectory names.
/// Each class is shuffled by `seed` and split so that round(fraction * n) images
/// go to train; `test_per_class` overrides the split with a fixed test count.
std::pair<Corpus, Corpus> load_image_folder(const std::filesystem::path& root, int64_t image_size,
                                            double split_fraction, uint64_t seed,
                                            std::optional<int64_t> test_per_class = std::nullopt);

/// One line per image: path, label, split.
void write_manifest(const std::filesystem::path& path, const Corpus& train, const Corpus& test);

struct Pose {
    double cx = 0;  // pixels
    double cy = 0;
    double angle = 0;  // radians
    double scale = 0;  // half-extent in pixels
};

struct SyntheticCorpus {
    Corpus corpus;
    std::vector<Pose> poses;
};

/// Procedural shapes: the class picks the shape/colour/texture family, each
/// image draws an independent pose (position, rotation, size) and background.
SyntheticCorpus synthetic_shapes_with_poses(int64_t classes, int64_t per_class, int64_t image_size, uint64_t seed);

Corpus synthetic_shapes(int64_t classes, int64_t per_class, int64_t image_size, uint64_t seed);

}  // namespace transferi2i::data
