#include "fsdm/episodes.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include "fsdm/errors.hpp"
#include "fsdm/image_io.hpp"

namespace fs = std::filesystem;

namespace fsdm {

int Dataset::class_index(const std::string& name) const {
  auto it = std::find(class_names.begin(), class_names.end(), name);
  return it == class_names.end() ? -1 : static_cast<int>(it - class_names.begin());
}

const std::vector<int>& ClassSplit::classes(Split split) const {
  switch (split) {
    case Split::kTrain:
      return train;
    case Split::kVal:
      return val;
    case Split::kTest:
      return test;
  }
  return train;
}

namespace {

template <typename T>
void shuffle(std::vector<T>& v, RngStream& rng) {
  for (size_t i = v.size(); i > 1; --i) {
    const auto j = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i) - 1));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace

ClassSplit make_split(const std::vector<int>& class_ids, const std::array<double, 3>& fractions, uint64_t seed) {
  double total = 0.0;
  for (double f : fractions) {
    if (f < 0.0) throw ConfigError("split fractions must be non-negative");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
  if (std::set<int>(class_ids.begin(), class_ids.end()).size() != class_ids.size()) {
    throw ConfigError("duplicate class ids in split input");
  }
  const size_t n = class_ids.size();
  std::array<size_t, 3> sizes{};
  std::array<double, 3> remainder{};
  size_t assigned = 0;
  for (size_t k = 0; k < 3; ++k) {
    const double exact = fractions[k] * static_cast<double>(n);
    sizes[k] = static_cast<size_t>(std::floor(exact + 1e-9));
    remainder[k] = exact - static_cast<double>(sizes[k]);
    assigned += sizes[k];
  }
  while (assigned < n) {
    const size_t k = static_cast<size_t>(std::max_element(remainder.begin(), remainder.end()) - remainder.begin());
    ++sizes[k];
    remainder[k] = -1.0;
    ++assigned;
  }
  std::vector<int> ids = class_ids;
  RngStream rng(seed, "split");
  shuffle(ids, rng);
  ClassSplit split;
  auto cut = ids.begin();
  split.train.assign(cut, cut + static_cast<ptrdiff_t>(sizes[0]));
  cut += static_cast<ptrdiff_t>(sizes[0]);
  split.val.assign(cut, cut + static_cast<ptrdiff_t>(sizes[1]));
  cut += static_cast<ptrdiff_t>(sizes[1]);
  split.test.assign(cut, ids.end());
  for (auto* list : {&split.train, &split.val, &split.test}) std::sort(list->begin(), list->end());
  return split;
}

ClassSplit explicit_split(std::vector<int> train, std::vector<int> val, std::vector<int> test) {
  std::set<int> seen;
  for (const auto* list : {&train, &val, &test}) {
    for (int id : *list) {
      if (!seen.insert(id).second) throw ConfigError("class " + std::to_string(id) + " appears in more than one split");
    }
  }
  return {std::move(train), std::move(val), std::move(test), true};
}

void write_split_files(const std::string& dir, const ClassSplit& split, const Dataset& dataset) {
  fs::create_directories(dir);
  for (Split s : {Split::kTrain, Split::kVal, Split::kTest}) {
    std::ofstream out(fs::path(dir) / (to_string(s) + ".txt"));
    if (!out) throw std::runtime_error("cannot write split file in " + dir);
    for (int id : split.classes(s)) out << dataset.class_names.at(static_cast<size_t>(id)) << "\n";
  }
}

ClassSplit read_split_files(const std::string& dir, const Dataset& dataset) {
  std::array<std::vector<int>, 3> lists;
  int k = 0;
  for (Split s : {Split::kTrain, Split::kVal, Split::kTest}) {
    const fs::path path = fs::path(dir) / (to_string(s) + ".txt");
    std::ifstream in(path);
    if (!in) throw ConfigError("missing split file " + path.string());
    std::string line;
    while (std::getline(in, line)) {
      while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
      if (line.empty()) continue;
      const int id = dataset.class_index(line);
      if (id < 0) throw ConfigError("split file " + path.string() + " names unknown class '" + line + "'");
      lists[static_cast<size_t>(k)].push_back(id);
    }
    ++k;
  }
  return explicit_split(lists[0], lists[1], lists[2]);
}

void EpisodeSpec::validate() const {
  if (set_size < 1) throw ConfigError("set_size must be at least 1");
  if (classes_per_set != 1) throw ConfigError("only one class per set is supported");
}

Episode sample_episode(const Dataset& dataset, const ClassSplit& split, const EpisodeSpec& spec, RngStream& rng) {
  spec.validate();
  std::vector<int> candidates = split.classes(spec.split);
  if (candidates.empty()) throw ConfigError("split '" + to_string(spec.split) + "' has no classes");
  const size_t needed = static_cast<size_t>(spec.set_size) + (spec.include_query ? 0 : 1);
  while (!candidates.empty()) {
    const auto pick = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(candidates.size()) - 1));
    const int cls = candidates[pick];
    const auto& pool = dataset.images.at(static_cast<size_t>(cls));
    if (pool.size() < needed) {
      candidates.erase(candidates.begin() + static_cast<ptrdiff_t>(pick));
      continue;
    }
    // Partial Fisher-Yates: the first `needed` entries become the draw.
    std::vector<size_t> order(pool.size());
    std::iota(order.begin(), order.end(), size_t{0});
    for (size_t i = 0; i < needed; ++i) {
      const auto j = static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(i), static_cast<int64_t>(pool.size()) - 1));
      std::swap(order[i], order[j]);
    }
    Episode ep;
    ep.class_id = cls;
    ep.support.class_id = cls;
    ep.support.split = spec.split;
    for (int i = 0; i < spec.set_size; ++i) ep.support.images.push_back(pool[order[static_cast<size_t>(i)]]);
    if (spec.include_query) {
      ep.query_index = static_cast<int>(rng.uniform_int(0, spec.set_size - 1));
      ep.query = ep.support.images[static_cast<size_t>(ep.query_index)];
    } else {
      ep.query = pool[order[static_cast<size_t>(spec.set_size)]];
    }
    return ep;
  }
  throw ConfigError("no class in split '" + to_string(spec.split) + "' has " + std::to_string(needed) + " images");
}

Tensor stack_supports(const std::vector<Episode>& episodes) {
  std::vector<SupportSet> sets;
  sets.reserve(episodes.size());
  for (const auto& e : episodes) sets.push_back(e.support);
  return stack_sets(sets);
}

Tensor stack_queries(const std::vector<Episode>& episodes) {
  if (episodes.empty()) throw ContractError("stack_queries: no episodes");
  Shape shape = episodes.front().query.shape();
  std::vector<double> values;
  for (const auto& e : episodes) values.insert(values.end(), e.query.data().begin(), e.query.data().end());
  shape.insert(shape.begin(), static_cast<int64_t>(episodes.size()));
  return Tensor(shape, std::move(values));
}

namespace {

using Point = std::array<double, 2>;

double uniform(RngStream& rng, double lo, double hi) { return lo + (hi - lo) * rng.uniform(); }

GlyphStroke random_stroke(RngStream& rng) {
  GlyphStroke s;
  s.width = uniform(rng, 0.07, 0.1);
  const int kind = static_cast<int>(rng.uniform_int(0, 2));
  constexpr int kSegments = 24;
  if (kind == 0) {
    const Point a{uniform(rng, 0.15, 0.85), uniform(rng, 0.15, 0.85)};
    const Point b{uniform(rng, 0.15, 0.85), uniform(rng, 0.15, 0.85)};
    s.points = {a, b};
  } else if (kind == 1) {
    const double r = uniform(rng, 0.12, 0.3);
    const double cx = uniform(rng, 0.2 + r * 0.5, 0.8 - r * 0.5), cy = uniform(rng, 0.2 + r * 0.5, 0.8 - r * 0.5);
    const double start = uniform(rng, 0.0, 2.0 * M_PI), sweep = uniform(rng, 0.6 * M_PI, 1.8 * M_PI);
    for (int i = 0; i <= kSegments; ++i) {
      const double a = start + sweep * i / kSegments;
      s.points.push_back({cx + r * std::cos(a), cy + r * std::sin(a)});
    }
  } else {
    const Point a{uniform(rng, 0.15, 0.85), uniform(rng, 0.15, 0.85)};
    const Point c{uniform(rng, 0.1, 0.9), uniform(rng, 0.1, 0.9)};
    const Point b{uniform(rng, 0.15, 0.85), uniform(rng, 0.15, 0.85)};
    for (int i = 0; i <= kSegments; ++i) {
      const double u = static_cast<double>(i) / kSegments, v = 1.0 - u;
      s.points.push_back({v * v * a[0] + 2 * u * v * c[0] + u * u * b[0], v * v * a[1] + 2 * u * v * c[1] + u * u * b[1]});
    }
  }
  return s;
}

double segment_distance(const Point& p, const Point& a, const Point& b) {
  const double dx = b[0] - a[0], dy = b[1] - a[1];
  const double len2 = dx * dx + dy * dy;
  double u = len2 > 0.0 ? ((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2 : 0.0;
  u = std::clamp(u, 0.0, 1.0);
  const double ex = a[0] + u * dx - p[0], ey = a[1] + u * dy - p[1];
  return std::sqrt(ex * ex + ey * ey);
}

}  // namespace

GlyphPrototype glyph_prototype(uint64_t seed, int class_id) {
  RngStream rng(seed, "glyph.class", static_cast<uint64_t>(class_id));
  GlyphPrototype g;
  const int strokes = static_cast<int>(rng.uniform_int(2, 4));
  for (int i = 0; i < strokes; ++i) g.strokes.push_back(random_stroke(rng));
  return g;
}

Tensor render_glyph(const GlyphPrototype& glyph, int image_size, uint64_t seed, int class_id, int instance) {
  double angle = 0.0, scale = 1.0, tx = 0.0, ty = 0.0, width_scale = 1.0;
  if (instance >= 0) {
    RngStream rng(seed, "glyph.instance." + std::to_string(class_id), static_cast<uint64_t>(instance));
    angle = uniform(rng, -0.15, 0.15);
    scale = uniform(rng, 0.9, 1.1);
    tx = uniform(rng, -0.05, 0.05);
    ty = uniform(rng, -0.05, 0.05);
    width_scale = uniform(rng, 0.8, 1.2);
  }
  const double ca = std::cos(angle), sa = std::sin(angle);
  const double aa = 1.0 / image_size;
  std::vector<double> values(static_cast<size_t>(image_size) * image_size);
  for (int y = 0; y < image_size; ++y) {
    for (int x = 0; x < image_size; ++x) {
      // Pixel centre mapped back into glyph coordinates.
      const double px = (x + 0.5) / image_size - 0.5 - tx, py = (y + 0.5) / image_size - 0.5 - ty;
      const Point p{(ca * px + sa * py) / scale + 0.5, (-sa * px + ca * py) / scale + 0.5};
      double coverage = 0.0;
      for (const auto& s : glyph.strokes) {
        double d = 1e9;
        for (size_t i = 0; i + 1 < s.points.size(); ++i) d = std::min(d, segment_distance(p, s.points[i], s.points[i + 1]));
        const double half = 0.5 * s.width * width_scale;
        coverage = std::max(coverage, std::clamp((half - d * scale) / aa + 0.5, 0.0, 1.0));
      }
      values[static_cast<size_t>(y) * image_size + x] = 2.0 * coverage - 1.0;
    }
  }
  return Tensor({1, image_size, image_size}, std::move(values));
}

namespace {

void check_glyph_size(int image_size) {
  if (image_size != 28 && image_size != 32) throw ConfigError("glyph image size must be 28 or 32");
}

std::string class_folder(int c) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "class_%03d", c);
  return buf;
}

}  // namespace

Dataset synth_glyph_dataset(int num_classes, int per_class, int image_size, uint64_t seed) {
  check_glyph_size(image_size);
  if (num_classes < 0 || per_class < 0) throw ConfigError("class and image counts must be non-negative");
  Dataset d;
  d.image_size = image_size;
  d.image_channels = 1;
  for (int c = 0; c < num_classes; ++c) {
    d.class_names.push_back(class_folder(c));
    const GlyphPrototype g = glyph_prototype(seed, c);
    std::vector<Tensor> images;
    for (int i = 0; i < per_class; ++i) {
      // Round through 8 bits so in-memory data equals what the files hold.
      images.push_back(image_to_tensor(tensor_to_image(render_glyph(g, image_size, seed, c, i))));
    }
    d.images.push_back(std::move(images));
  }
  return d;
}

void synth_glyphs(int num_classes, int per_class, int image_size, uint64_t seed, const std::string& root) {
  const Dataset d = synth_glyph_dataset(num_classes, per_class, image_size, seed);
  for (int c = 0; c < d.num_classes(); ++c) {
    const fs::path dir = fs::path(root) / d.class_names[static_cast<size_t>(c)];
    fs::create_directories(dir);
    for (size_t i = 0; i < d.images[static_cast<size_t>(c)].size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "img_%04zu.png", i);
      write_png((dir / name).string(), tensor_to_image(d.images[static_cast<size_t>(c)][i]));
    }
  }
}

Dataset load_class_folders(const std::string& root) {
  if (!fs::is_directory(root)) throw ConfigError("dataset root " + root + " is not a directory");
  std::vector<fs::path> class_dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) class_dirs.push_back(entry.path());
  }
  if (class_dirs.empty()) throw ConfigError("dataset root " + root + " contains no class folders");
  std::sort(class_dirs.begin(), class_dirs.end());
  Dataset d;
  for (const auto& dir : class_dirs) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.is_regular_file() && entry.path().extension() == ".png") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<Tensor> images;
    for (const auto& f : files) {
      Image8 img;
      try {
        img = read_png(f.string());
      } catch (const std::exception& e) {
        throw ConfigError(std::string("unreadable image: ") + e.what());
      }
      if (img.width != img.height) throw ConfigError("image " + f.string() + " is not square");
      if (d.image_size == 0) {
        d.image_size = img.width;
        d.image_channels = img.channels;
      } else if (img.width != d.image_size || img.channels != d.image_channels) {
        throw ConfigError("image " + f.string() + " is " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                          "x" + std::to_string(img.channels) + ", expected " + std::to_string(d.image_size) + "x" +
                          std::to_string(d.image_size) + "x" + std::to_string(d.image_channels));
      }
      images.push_back(image_to_tensor(img));
    }
    d.class_names.push_back(dir.filename().string());
    d.images.push_back(std::move(images));
  }
  return d;
}

}  // namespace fsdm
