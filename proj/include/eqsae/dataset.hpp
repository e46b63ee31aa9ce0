#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "eqsae/tensor.hpp"

namespace eqsae::data {

inline constexpr int kImageSize = 64;
inline constexpr int kGlyphSize = 32;
inline constexpr int kShapeCount = 8;
inline constexpr int kQuadrants = 4;

// Shapes 0 (horizontal bar) and 1 (diagonal line) repeat after a half turn;
// the other six need the full four quarter turns.
int orientation_period(int shape);

struct QuadrantSpec {
  int shape = 0;
  int orientation = 0;
  bool operator==(const QuadrantSpec&) const = default;
};

// Quadrant indices: 0 top-left, 1 top-right, 2 bottom-left, 3 bottom-right.
// `quadrants` always describes the image as rendered (post-rotation);
// `power` records how many quarter turns were applied to the canonical
// (power 0) layout it was derived from.
struct ImageSpec {
  std::array<QuadrantSpec, kQuadrants> quadrants;
  int power = 0;
  bool operator==(const ImageSpec&) const = default;
};

struct LabeledImage {
  num::Tensor<float> pixels;  // [1, 64, 64], values in {0, 1}
  ImageSpec spec;
};

// 32x32 binary raster; orientation o is exactly o counterclockwise quarter
// turns of the orientation-0 raster.
std::vector<float> render_glyph(int shape, int orientation);

// Counterclockwise quarter turn p times; a pure pixel permutation.
num::Tensor<float> rotate_image(const num::Tensor<float>& img, int p);

// Metadata counterpart of rotate_image: permutes quadrants and advances
// orientations.
ImageSpec rotate_spec(const ImageSpec& spec, int p);

// Renders the canonical layout given by `quadrants`, then rotates the whole
// image (and its metadata) by spec.power quarter turns.
LabeledImage compose_image(const ImageSpec& spec);

enum class Augment { none, all_rotations, random_rotation };

// n_canonical independent draws (uniform shape per quadrant, uniform
// orientation within each shape's period). all_rotations emits powers
// 0..3 consecutively per draw, so index 4*i+p is orbit i at power p.
std::vector<LabeledImage> generate_dataset(int n_canonical, std::uint64_t seed,
                                           Augment augment);

enum class TaskFamily { S, SP, SO, SPO };

struct TaskSpec {
  TaskFamily family;
  int shape = 0;
  std::optional<int> position;
  std::optional<int> orientation;

  std::string name() const;
};

// All 180 probing tasks in a fixed order: 8 S, 32 SP, 28 SO, 112 SPO.
std::vector<TaskSpec> enumerate_tasks();

// Evaluates the task predicate against the image's post-rotation metadata.
bool task_label(const LabeledImage& img, const TaskSpec& task);

const char* family_name(TaskFamily family);

// Dataset persistence: one ETNS tensor [n, 1, 64, 64] plus a JSON sidecar
// with the specs.
void save_dataset(const std::string& prefix, const std::vector<LabeledImage>& images);
std::vector<LabeledImage> load_dataset(const std::string& prefix);

}  // namespace eqsae::data
