#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include "doctest.h"
#include "fsdm/episodes.hpp"
#include "fsdm/errors.hpp"
#include "fsdm/image_io.hpp"
#include "test_util.hpp"

using namespace fsdm;
using namespace fsdm::testing;
namespace fs = std::filesystem;

namespace {

std::vector<int> iota_ids(int n) {
  std::vector<int> ids(static_cast<size_t>(n));
  std::iota(ids.begin(), ids.end(), 0);
  return ids;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("fsdm_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Dataset of constant images, `sizes[c]` images in class c.
Dataset constant_dataset(const std::vector<int>& sizes) {
  Dataset d;
  d.image_size = 2;
  d.image_channels = 1;
  for (size_t c = 0; c < sizes.size(); ++c) {
    d.class_names.push_back("c" + std::to_string(c));
    d.images.emplace_back();
    for (int i = 0; i < sizes[c]; ++i) d.images.back().push_back(Tensor::full({1, 2, 2}, 0.01 * (100 * c + i)));
  }
  return d;
}

}  // namespace

TEST_CASE("fractional split sizes, disjointness and determinism") {
  const ClassSplit s = make_split(iota_ids(100), {0.6, 0.2, 0.2}, 3);
  CHECK(s.train.size() == 60);
  CHECK(s.val.size() == 20);
  CHECK(s.test.size() == 20);
  std::set<int> all(s.train.begin(), s.train.end());
  all.insert(s.val.begin(), s.val.end());
  all.insert(s.test.begin(), s.test.end());
  CHECK(all.size() == 100);
  const ClassSplit again = make_split(iota_ids(100), {0.6, 0.2, 0.2}, 3);
  CHECK(again.train == s.train);
  CHECK(again.test == s.test);
  CHECK(make_split(iota_ids(100), {0.6, 0.2, 0.2}, 4).train != s.train);
  const ClassSplit odd = make_split(iota_ids(7), {0.5, 0.25, 0.25}, 1);
  CHECK(odd.train.size() + odd.val.size() + odd.test.size() == 7);
  CHECK_THROWS_AS(make_split(iota_ids(10), {0.5, 0.2, 0.2}, 1), ConfigError);
}

TEST_CASE("explicit split lists") {
  const ClassSplit s = explicit_split({4, 1}, {0}, {2, 3});
  CHECK(s.train == std::vector<int>{4, 1});
  CHECK(s.val == std::vector<int>{0});
  CHECK(s.test == std::vector<int>{2, 3});
  CHECK_THROWS_AS(explicit_split({1, 2}, {2}, {3}), ConfigError);
}

TEST_CASE("split files round-trip") {
  const Dataset d = constant_dataset({1, 1, 1, 1});
  const ClassSplit s = explicit_split({0, 3}, {1}, {2});
  const fs::path dir = scratch_dir("split");
  write_split_files(dir.string(), s, d);
  const ClassSplit r = read_split_files(dir.string(), d);
  CHECK(r.train == s.train);
  CHECK(r.val == s.val);
  CHECK(r.test == s.test);
  fs::remove_all(dir);
}

TEST_CASE("episodes follow the query-inclusion rule") {
  const Dataset d = constant_dataset({5, 8, 3});
  const ClassSplit split = explicit_split(std::vector<int>{0, 1, 2}, {}, {});
  RngStream rng(1, "episodes");
  EpisodeSpec one{1, 1, Split::kTrain, true};
  for (int i = 0; i < 20; ++i) {
    const Episode e = sample_episode(d, split, one, rng);
    CHECK(e.query_index == 0);
    CHECK(e.query.same_node(e.support.images[0]));
  }
  EpisodeSpec spec{4, 1, Split::kTrain, true};
  for (int i = 0; i < 50; ++i) {
    const Episode e = sample_episode(d, split, spec, rng);
    CHECK(e.class_id != 2);  // too small for S = 4
    REQUIRE(e.support.images.size() == 4);
    std::set<const void*> distinct;
    for (const auto& img : e.support.images) distinct.insert(&img.node());
    CHECK(distinct.size() == 4);
    CHECK(e.query.same_node(e.support.images[static_cast<size_t>(e.query_index)]));
  }
  spec.include_query = false;
  for (int i = 0; i < 50; ++i) {
    const Episode e = sample_episode(d, split, spec, rng);
    CHECK(e.query_index == -1);
    for (const auto& img : e.support.images) CHECK_FALSE(img.same_node(e.query));
  }
}

TEST_CASE("excluding the query needs a complement") {
  const Dataset d = constant_dataset({5});
  const ClassSplit split = explicit_split(std::vector<int>{0}, {}, {});
  RngStream rng(1, "episodes");
  CHECK_THROWS_AS(sample_episode(d, split, {5, 1, Split::kTrain, false}, rng), ConfigError);
  CHECK_NOTHROW(sample_episode(d, split, {5, 1, Split::kTrain, true}, rng));
  CHECK_THROWS_AS(sample_episode(d, split, {5, 1, Split::kVal, true}, rng), ConfigError);
}

TEST_CASE("episode streams are reproducible and respect the split") {
  const Dataset d = constant_dataset(std::vector<int>(10, 6));
  const ClassSplit split = make_split(iota_ids(10), {0.6, 0.2, 0.2}, 2);
  const EpisodeSpec spec{3, 1, Split::kTest, false};
  RngStream a(5, "stream"), b(5, "stream");
  const std::set<int> train(split.train.begin(), split.train.end());
  for (int i = 0; i < 30; ++i) {
    const Episode x = sample_episode(d, split, spec, a), y = sample_episode(d, split, spec, b);
    CHECK(x.class_id == y.class_id);
    CHECK(x.query.same_node(y.query));
    CHECK(train.count(x.class_id) == 0);
  }
}

TEST_CASE("stacked episode batches") {
  const Dataset d = constant_dataset({4, 4});
  const ClassSplit split = explicit_split(std::vector<int>{0, 1}, {}, {});
  RngStream rng(2, "stack");
  std::vector<Episode> eps;
  for (int i = 0; i < 3; ++i) eps.push_back(sample_episode(d, split, {2, 1, Split::kTrain, true}, rng));
  CHECK(stack_supports(eps).shape() == Shape{3, 2, 1, 2, 2});
  CHECK(stack_queries(eps).shape() == Shape{3, 1, 2, 2});
}

TEST_CASE("glyph prototypes are deterministic per class") {
  const GlyphPrototype a = glyph_prototype(7, 3), b = glyph_prototype(7, 3), c = glyph_prototype(7, 4);
  CHECK(bitwise_equal(render_glyph(a, 28, 7, 3, -1), render_glyph(b, 28, 7, 3, -1)));
  CHECK_FALSE(bitwise_equal(render_glyph(a, 28, 7, 3, -1), render_glyph(c, 28, 7, 4, -1)));
  CHECK_FALSE(bitwise_equal(render_glyph(a, 28, 7, 3, 0), render_glyph(a, 28, 7, 3, 1)));
}

TEST_CASE("glyph classes are tighter than the gaps between them") {
  const Dataset d = synth_glyph_dataset(10, 8, 28, 1);
  double within = 0, between = 0;
  int nw = 0, nb = 0;
  for (int c1 = 0; c1 < 10; ++c1) {
    for (int c2 = c1; c2 < 10; ++c2) {
      for (int i = 0; i < 8; ++i) {
        for (int j = 0; j < 8; ++j) {
          if (c1 == c2 && j <= i) continue;
          const double dist = ops::mse(d.images[static_cast<size_t>(c1)][static_cast<size_t>(i)],
                                       d.images[static_cast<size_t>(c2)][static_cast<size_t>(j)])
                                  .item();
          (c1 == c2 ? within : between) += dist;
          ++(c1 == c2 ? nw : nb);
        }
      }
    }
  }
  CHECK(within / nw < between / nb);
  for (const auto& cls : d.images) {
    for (const auto& img : cls) {
      for (double v : img.data()) {
        CHECK(v >= -1.0);
        CHECK(v <= 1.0);
      }
    }
  }
  CHECK_THROWS_AS(synth_glyph_dataset(2, 2, 30, 1), ConfigError);
}

TEST_CASE("synthetic glyphs on disk load back exactly") {
  const fs::path root = scratch_dir("glyphs");
  synth_glyphs(3, 4, 28, 5, root.string());
  const Dataset loaded = load_class_folders(root.string());
  const Dataset direct = synth_glyph_dataset(3, 4, 28, 5);
  REQUIRE(loaded.num_classes() == 3);
  CHECK(loaded.class_names == direct.class_names);
  CHECK(loaded.image_size == 28);
  for (size_t c = 0; c < 3; ++c) {
    REQUIRE(loaded.images[c].size() == 4);
    for (size_t i = 0; i < 4; ++i) CHECK(bitwise_equal(loaded.images[c][i], direct.images[c][i]));
  }
  fs::remove_all(root);

  const fs::path empty = scratch_dir("glyphs_empty");
  synth_glyphs(2, 0, 28, 5, empty.string());
  const Dataset none = load_class_folders(empty.string());
  CHECK(none.num_classes() == 2);
  CHECK(none.images[0].empty());
  fs::remove_all(empty);
}

TEST_CASE("class-folder loading errors and pixel mapping") {
  CHECK(pixel_to_unit(0) == -1.0);
  CHECK(pixel_to_unit(255) == 1.0);
  CHECK(pixel_to_unit(128) == doctest::Approx(2.0 * 128 / 255 - 1));
  CHECK(unit_to_pixel(pixel_to_unit(77)) == 77);

  const fs::path empty = scratch_dir("empty_root");
  CHECK_THROWS_AS(load_class_folders(empty.string()), ConfigError);
  CHECK_THROWS_AS(load_class_folders((empty / "missing").string()), ConfigError);

  fs::create_directories(empty / "a");
  Image8 small{4, 4, 1, std::vector<uint8_t>(16, 128)}, large{6, 6, 1, std::vector<uint8_t>(36, 0)};
  write_png((empty / "a" / "0.png").string(), small);
  write_png((empty / "a" / "1.png").string(), large);
  CHECK_THROWS_AS(load_class_folders(empty.string()), ConfigError);
  fs::remove(empty / "a" / "1.png");
  {
    std::ofstream bad(empty / "a" / "2.png");
    bad << "not a png";
  }
  try {
    load_class_folders(empty.string());
    FAIL("expected an error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("2.png") != std::string::npos);
  }
  fs::remove_all(empty);
}
