#include "eqsae/dataset.hpp"

#include <fstream>

#include "json.hpp"

#include "eqsae/rng.hpp"
#include "eqsae/tensor_io.hpp"

namespace eqsae::data {

using num::Tensor;

int orientation_period(int shape) {
  if (shape < 0 || shape >= kShapeCount) {
    throw num::ParamError("invalid shape id " + std::to_string(shape));
  }
  return shape <= 1 ? 2 : 4;
}

namespace {

using Raster = std::vector<float>;  // kGlyphSize x kGlyphSize

void fill_rect(Raster& r, int r0, int r1, int c0, int c1) {
  for (int i = r0; i <= r1; ++i)
    for (int j = c0; j <= c1; ++j) r[i * kGlyphSize + j] = 1.0f;
}

// Orientation-0 rasters. All glyphs stay >= 2 pixels away from the cell
// border. Shapes 0 and 1 are exactly symmetric under a half turn (period 2);
// the rest are asymmetric under every non-identity rotation (period 4).
Raster base_glyph(int shape) {
  Raster r(kGlyphSize * kGlyphSize, 0.0f);
  switch (shape) {
    case 0:  // horizontal bar, 24x8, centered
      fill_rect(r, 12, 19, 4, 27);
      break;
    case 1:  // main-diagonal line, thickness 3
      for (int i = 3; i <= 28; ++i)
        for (int j = 3; j <= 28; ++j)
          if (std::abs(i - j) <= 1) r[i * kGlyphSize + j] = 1.0f;
      break;
    case 2:  // lower-left right triangle
      for (int i = 4; i <= 27; ++i)
        for (int j = 4; j <= i; ++j) r[i * kGlyphSize + j] = 1.0f;
      break;
    case 3:  // L
      fill_rect(r, 4, 27, 4, 11);
      fill_rect(r, 20, 27, 4, 27);
      break;
    case 4:  // T
      fill_rect(r, 4, 11, 4, 27);
      fill_rect(r, 12, 27, 12, 19);
      break;
    case 5:  // right-pointing arrow
      fill_rect(r, 14, 18, 4, 17);
      for (int dc = 0; dc <= 9; ++dc) {
        const int half = 9 - dc;
        fill_rect(r, 16 - half, 16 + half, 18 + dc, 18 + dc);
      }
      break;
    case 6:  // half disk, flat side down
      for (int i = 9; i <= 20; ++i)
        for (int j = 5; j <= 27; ++j) {
          const int di = i - 20, dj = j - 16;
          if (di * di + dj * dj <= 121) r[i * kGlyphSize + j] = 1.0f;
        }
      break;
    case 7:  // staircase
      for (int s = 0; s < 4; ++s) fill_rect(r, 4 + 6 * s, 9 + 6 * s, 4 + 6 * s, 27);
      break;
    default:
      throw num::ParamError("invalid shape id " + std::to_string(shape));
  }
  return r;
}

// One counterclockwise quarter turn of a square raster:
// out[r][c] = in[c][n-1-r].
Raster rotate_raster(const Raster& in, int n) {
  Raster out(in.size());
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) out[r * n + c] = in[c * n + (n - 1 - r)];
  return out;
}

}  // namespace

std::vector<float> render_glyph(int shape, int orientation) {
  const int period = orientation_period(shape);
  if (orientation < 0 || orientation >= period) {
    throw num::ParamError("orientation " + std::to_string(orientation) +
                          " invalid for shape " + std::to_string(shape) + " (period " +
                          std::to_string(period) + ")");
  }
  Raster r = base_glyph(shape);
  for (int i = 0; i < orientation; ++i) r = rotate_raster(r, kGlyphSize);
  return r;
}

Tensor<float> rotate_image(const Tensor<float>& img, int p) {
  if (img.dims() != num::Dims{1, kImageSize, kImageSize}) {
    throw num::ShapeError("rotate_image expects [1, 64, 64], got " +
                          num::dims_to_string(img.dims()));
  }
  p = ((p % 4) + 4) % 4;
  if (p == 0) {
    return Tensor<float>::from_data(img.dims(),
                                    {img.values().begin(), img.values().end()});
  }
  std::vector<float> cur(img.values().begin(), img.values().end());
  for (int t = 0; t < p; ++t) {
    std::vector<float> next(cur.size());
    for (int r = 0; r < kImageSize; ++r)
      for (int c = 0; c < kImageSize; ++c)
        next[r * kImageSize + c] = cur[c * kImageSize + (kImageSize - 1 - r)];
    cur.swap(next);
  }
  return Tensor<float>::from_data({1, kImageSize, kImageSize}, std::move(cur));
}

ImageSpec rotate_spec(const ImageSpec& spec, int p) {
  p = ((p % 4) + 4) % 4;
  ImageSpec out = spec;
  for (int t = 0; t < p; ++t) {
    ImageSpec step = out;
    // Quadrant moves under one counterclockwise turn; each glyph advances
    // one orientation within its period.
    constexpr int kNewFromOld[4] = {1, 3, 0, 2};  // new[q] = old[kNewFromOld[q]]
    for (int q = 0; q < 4; ++q) {
      const QuadrantSpec& src = out.quadrants[kNewFromOld[q]];
      step.quadrants[q].shape = src.shape;
      step.quadrants[q].orientation =
          (src.orientation + 1) % orientation_period(src.shape);
    }
    out = step;
  }
  return out;
}

LabeledImage compose_image(const ImageSpec& spec) {
  for (const auto& q : spec.quadrants) {
    if (q.shape < 0 || q.shape >= kShapeCount || q.orientation < 0 ||
        q.orientation >= orientation_period(q.shape)) {
      throw num::ParamError("invalid image spec");
    }
  }
  if (spec.power < 0 || spec.power > 3) throw num::ParamError("power must be in [0, 3]");

  std::vector<float> pixels(kImageSize * kImageSize, 0.0f);
  constexpr int kOrigins[4][2] = {{0, 0}, {0, 32}, {32, 0}, {32, 32}};
  for (int q = 0; q < kQuadrants; ++q) {
    const Raster glyph = render_glyph(spec.quadrants[q].shape, spec.quadrants[q].orientation);
    const int r0 = kOrigins[q][0], c0 = kOrigins[q][1];
    for (int i = 0; i < kGlyphSize; ++i)
      for (int j = 0; j < kGlyphSize; ++j)
        pixels[(r0 + i) * kImageSize + (c0 + j)] = glyph[i * kGlyphSize + j];
  }

  LabeledImage img;
  img.pixels = rotate_image(
      Tensor<float>::from_data({1, kImageSize, kImageSize}, std::move(pixels)), spec.power);
  img.spec = rotate_spec(ImageSpec{spec.quadrants, 0}, spec.power);
  img.spec.power = spec.power;
  return img;
}

std::vector<LabeledImage> generate_dataset(int n_canonical, std::uint64_t seed,
                                           Augment augment) {
  if (n_canonical < 1) throw num::ParamError("n_canonical must be >= 1");
  std::vector<LabeledImage> out;
  out.reserve(static_cast<std::size_t>(n_canonical) *
              (augment == Augment::all_rotations ? 4 : 1));
  for (int i = 0; i < n_canonical; ++i) {
    Rng rng(derive_seed(seed, "image", "", static_cast<std::uint64_t>(i)));
    ImageSpec spec;
    for (int q = 0; q < kQuadrants; ++q) {
      spec.quadrants[q].shape = static_cast<int>(rng.next_below(kShapeCount));
      spec.quadrants[q].orientation = static_cast<int>(
          rng.next_below(static_cast<std::uint64_t>(orientation_period(spec.quadrants[q].shape))));
    }
    switch (augment) {
      case Augment::none:
        spec.power = 0;
        out.push_back(compose_image(spec));
        break;
      case Augment::all_rotations:
        for (int p = 0; p < 4; ++p) {
          spec.power = p;
          out.push_back(compose_image(spec));
        }
        break;
      case Augment::random_rotation:
        spec.power = static_cast<int>(rng.next_below(4));
        out.push_back(compose_image(spec));
        break;
    }
  }
  return out;
}

const char* family_name(TaskFamily family) {
  switch (family) {
    case TaskFamily::S: return "S";
    case TaskFamily::SP: return "SP";
    case TaskFamily::SO: return "SO";
    case TaskFamily::SPO: return "SPO";
  }
  return "?";
}

std::string TaskSpec::name() const {
  std::string s = std::string(family_name(family)) + "(s" + std::to_string(shape);
  if (position) s += ",p" + std::to_string(*position);
  if (orientation) s += ",o" + std::to_string(*orientation);
  return s + ")";
}

std::vector<TaskSpec> enumerate_tasks() {
  std::vector<TaskSpec> tasks;
  tasks.reserve(180);
  for (int s = 0; s < kShapeCount; ++s) {
    tasks.push_back({TaskFamily::S, s, std::nullopt, std::nullopt});
  }
  for (int s = 0; s < kShapeCount; ++s)
    for (int p = 0; p < kQuadrants; ++p)
      tasks.push_back({TaskFamily::SP, s, p, std::nullopt});
  for (int s = 0; s < kShapeCount; ++s)
    for (int o = 0; o < orientation_period(s); ++o)
      tasks.push_back({TaskFamily::SO, s, std::nullopt, o});
  for (int s = 0; s < kShapeCount; ++s)
    for (int p = 0; p < kQuadrants; ++p)
      for (int o = 0; o < orientation_period(s); ++o)
        tasks.push_back({TaskFamily::SPO, s, p, o});
  return tasks;
}

bool task_label(const LabeledImage& img, const TaskSpec& task) {
  const auto& qs = img.spec.quadrants;
  switch (task.family) {
    case TaskFamily::S:
      for (const auto& q : qs)
        if (q.shape == task.shape) return true;
      return false;
    case TaskFamily::SP:
      return qs[*task.position].shape == task.shape;
    case TaskFamily::SO:
      for (const auto& q : qs)
        if (q.shape == task.shape && q.orientation == *task.orientation) return true;
      return false;
    case TaskFamily::SPO:
      return qs[*task.position].shape == task.shape &&
             qs[*task.position].orientation == *task.orientation;
  }
  return false;
}

void save_dataset(const std::string& prefix, const std::vector<LabeledImage>& images) {
  const std::size_t n = images.size();
  std::vector<float> all(n * kImageSize * kImageSize);
  for (std::size_t i = 0; i < n; ++i) {
    auto v = images[i].pixels.values();
    std::copy(v.begin(), v.end(), all.begin() + i * kImageSize * kImageSize);
  }
  num::write_tensor(prefix + ".etns",
                    Tensor<float>::from_data({n, 1, kImageSize, kImageSize}, std::move(all)));

  nlohmann::json j;
  j["version"] = 1;
  j["count"] = n;
  auto& specs = j["specs"] = nlohmann::json::array();
  for (const auto& img : images) {
    nlohmann::json s;
    s["power"] = img.spec.power;
    auto& quads = s["quadrants"] = nlohmann::json::array();
    for (const auto& q : img.spec.quadrants) {
      quads.push_back({{"shape", q.shape}, {"orientation", q.orientation}});
    }
    specs.push_back(std::move(s));
  }
  std::ofstream out(prefix + ".json");
  if (!out) throw num::IoError("cannot write " + prefix + ".json");
  out << j.dump(1) << "\n";
}

std::vector<LabeledImage> load_dataset(const std::string& prefix) {
  auto all = num::read_tensor<float>(prefix + ".etns");
  if (all.dims().size() != 4 || all.dim(1) != 1 || all.dim(2) != kImageSize ||
      all.dim(3) != kImageSize) {
    throw num::IoError("unexpected dataset tensor shape in " + prefix + ".etns");
  }
  std::ifstream in(prefix + ".json");
  if (!in) throw num::IoError("cannot read " + prefix + ".json");
  nlohmann::json j = nlohmann::json::parse(in);
  const std::size_t n = j.at("count").get<std::size_t>();
  if (n != all.dim(0) || j.at("specs").size() != n) {
    throw num::IoError("dataset manifest does not match tensor in " + prefix);
  }
  std::vector<LabeledImage> images(n);
  const auto vals = all.values();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = j["specs"][i];
    images[i].spec.power = s.at("power").get<int>();
    for (int q = 0; q < kQuadrants; ++q) {
      images[i].spec.quadrants[q].shape = s.at("quadrants")[q].at("shape").get<int>();
      images[i].spec.quadrants[q].orientation =
          s.at("quadrants")[q].at("orientation").get<int>();
    }
    images[i].pixels = Tensor<float>::from_data(
        {1, kImageSize, kImageSize},
        std::vector<float>(vals.begin() + i * kImageSize * kImageSize,
                           vals.begin() + (i + 1) * kImageSize * kImageSize));
  }
  return images;
}

}  // namespace eqsae::data
