#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "fsdm/rng.hpp"
#include "fsdm/setenc.hpp"
#include "fsdm/tensor.hpp"

namespace fsdm {

// Images grouped by class, each [C, H, W] in [-1, 1].
struct Dataset {
  int image_size = 0;
  int image_channels = 0;
  std::vector<std::string> class_names;
  std::vector<std::vector<Tensor>> images;  // images[class_id]

  int num_classes() const { return static_cast<int>(class_names.size()); }
  int class_index(const std::string& name) const;  // -1 when absent
};

struct ClassSplit {
  std::vector<int> train, val, test;
  bool disjoint = true;

  const std::vector<int>& classes(Split split) const;
};

// Shuffles class_ids under seed and cuts them by fractions (train, val, test).
// Sizes are floor(n * f) with leftovers going to the largest remainders.
ClassSplit make_split(const std::vector<int>& class_ids, const std::array<double, 3>& fractions, uint64_t seed);
// Explicit lists, returned verbatim; overlapping lists are rejected.
ClassSplit explicit_split(std::vector<int> train, std::vector<int> val, std::vector<int> test);

// Split files: <dir>/{train,val,test}.txt, one class name per line.
void write_split_files(const std::string& dir, const ClassSplit& split, const Dataset& dataset);
ClassSplit read_split_files(const std::string& dir, const Dataset& dataset);

struct EpisodeSpec {
  int set_size = 5;
  int classes_per_set = 1;
  Split split = Split::kTrain;
  bool include_query = true;

  void validate() const;
};

struct Episode {
  SupportSet support;
  Tensor query;          // [C, H, W]
  int class_id = -1;
  int query_index = -1;  // position of the query in the support, -1 when excluded
};

// Draws a class uniformly from the split, then set_size distinct images, then
// the query (from the support or from the rest of the class). Classes too
// small for the request are skipped; ConfigError once none is left.
Episode sample_episode(const Dataset& dataset, const ClassSplit& split, const EpisodeSpec& spec, RngStream& rng);

// Batched views of episodes: support [B, N_s, C, H, W], queries [B, C, H, W].
Tensor stack_supports(const std::vector<Episode>& episodes);
Tensor stack_queries(const std::vector<Episode>& episodes);

// Procedural glyph classes: a class is a few random strokes and arcs drawn
// from a generator keyed by (seed, class); instances add a small affine
// jitter and stroke-width variation.
struct GlyphStroke {
  std::vector<std::array<double, 2>> points;  // polyline in unit coordinates
  double width = 0.06;
};
struct GlyphPrototype {
  std::vector<GlyphStroke> strokes;
};

GlyphPrototype glyph_prototype(uint64_t seed, int class_id);
// Renders [1, size, size]; instance < 0 renders the prototype without jitter.
Tensor render_glyph(const GlyphPrototype& glyph, int image_size, uint64_t seed, int class_id, int instance);
Dataset synth_glyph_dataset(int num_classes, int per_class, int image_size, uint64_t seed);
// Writes the class-folder layout <root>/class_XXX/img_XXXX.png.
void synth_glyphs(int num_classes, int per_class, int image_size, uint64_t seed, const std::string& root);

// <root>/<class>/<image>.png, classes and files in lexicographic order.
Dataset load_class_folders(const std::string& root);

}  // namespace fsdm
