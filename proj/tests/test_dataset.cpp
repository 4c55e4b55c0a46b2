#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "aelab/common.hpp"
#include "aelab/dataset.hpp"

using namespace aelab;
namespace fs = std::filesystem;

namespace {
struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("aelab_ds_" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};
}  // namespace

static std::vector<unsigned char> fake_cifar_records(int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<unsigned char> bytes;
  for (int r = 0; r < n; ++r) {
    bytes.push_back(static_cast<unsigned char>(r % 10));
    for (int i = 0; i < 3072; ++i) bytes.push_back(static_cast<unsigned char>(rng.below(256)));
  }
  return bytes;
}

TEST_CASE("cifar10 record decode/re-encode is byte-identical") {
  auto bytes = fake_cifar_records(23, 99);
  DatasetSplit split = decode_cifar10_records(bytes, "test");
  CHECK(split.count() == 23);
  CHECK(split.image_shape == std::array<int, 3>{3, 32, 32});
  auto round = encode_cifar10_records(split);
  REQUIRE(round.size() == bytes.size());
  CHECK(std::equal(round.begin(), round.end(), bytes.begin()));
}

TEST_CASE("malformed cifar files report byte offsets") {
  auto bytes = fake_cifar_records(2, 1);
  bytes.pop_back();
  CHECK_THROWS_AS(decode_cifar10_records(bytes, "x"), IoError);
  auto bad = fake_cifar_records(2, 1);
  bad[3073] = 77;  // label byte of the second record
  CHECK_THROWS_WITH_AS(decode_cifar10_records(bad, "x"), doctest::Contains("3073"), IoError);
}

TEST_CASE("ingest_cifar10 reads the canonical file layout") {
  TempDir tmp;
  for (int i = 1; i <= 5; ++i) {
    auto b = fake_cifar_records(20, 100 + static_cast<std::uint64_t>(i));
    write_file((tmp.path / ("data_batch_" + std::to_string(i) + ".bin")).string(),
               std::string(b.begin(), b.end()));
  }
  auto t = fake_cifar_records(20, 200);
  write_file((tmp.path / "test_batch.bin").string(), std::string(t.begin(), t.end()));

  Cifar10Options opts;
  auto splits = ingest_cifar10(tmp.path.string(), opts);
  CHECK(splits.train.count() == 100);
  CHECK(splits.test.count() == 20);
  splits.train.validate();

  SUBCASE("missing file error") {
    fs::remove(tmp.path / "test_batch.bin");
    CHECK_THROWS_WITH_AS(ingest_cifar10(tmp.path.string(), opts),
                         doctest::Contains("test_batch.bin"), IoError);
  }
  SUBCASE("subsample and downscale") {
    opts.subsample_per_split = 10;
    opts.downscale_to = 16;
    opts.seed = 5;
    auto small = ingest_cifar10(tmp.path.string(), opts);
    CHECK(small.train.count() == 10);
    CHECK(small.train.image_shape == std::array<int, 3>{3, 16, 16});
    // stratified: exactly one per class here
    std::vector<int> per_class(10, 0);
    for (int l : small.train.labels) ++per_class[static_cast<std::size_t>(l)];
    for (int c = 0; c < 10; ++c) CHECK(per_class[static_cast<std::size_t>(c)] == 1);
  }
}

TEST_CASE("stratified subsample is exactly balanced") {
  SyntheticConfig cfg;
  cfg.per_class_train = 20;
  cfg.per_class_test = 5;
  cfg.seed = 3;
  auto data = make_synthetic(cfg);
  auto sub = stratified_subsample(data.train, 100, 17);
  CHECK(sub.count() == 100);
  std::vector<int> per_class(10, 0);
  for (int l : sub.labels) ++per_class[static_cast<std::size_t>(l)];
  for (int c = 0; c < 10; ++c) CHECK(per_class[static_cast<std::size_t>(c)] == 10);
}

TEST_CASE("synthetic dataset is deterministic, balanced, in-domain and learnable") {
  SyntheticConfig cfg;
  cfg.per_class_train = 30;
  cfg.per_class_test = 10;
  cfg.seed = 7;
  auto a = make_synthetic(cfg);
  auto b = make_synthetic(cfg);
  CHECK(a.train.images == b.train.images);  // bitwise determinism
  CHECK(a.test.labels == b.test.labels);

  a.train.validate();
  a.test.validate();

  std::vector<int> per_class(10, 0);
  for (int l : a.train.labels) ++per_class[static_cast<std::size_t>(l)];
  for (int c = 0; c < 10; ++c) CHECK(per_class[static_cast<std::size_t>(c)] == 30);

  // linear probe clears chance by a wide margin
  double acc = linear_probe_accuracy(a.train, a.test);
  CHECK(acc > 0.3);

  SUBCASE("different seeds differ") {
    cfg.seed = 8;
    auto c = make_synthetic(cfg);
    CHECK(a.train.images != c.train.images);
  }
}

TEST_CASE("dataset container round-trips bit-exactly") {
  TempDir tmp;
  SyntheticConfig cfg;
  cfg.per_class_train = 5;
  cfg.per_class_test = 2;
  cfg.seed = 11;
  auto data = make_synthetic(cfg);
  std::string p1 = (tmp.path / "a.aeds").string();
  std::string p2 = (tmp.path / "b.aeds").string();
  save_dataset(data.train, p1);
  DatasetSplit loaded = load_dataset(p1);
  CHECK(loaded.images == data.train.images);
  CHECK(loaded.labels == data.train.labels);
  CHECK(loaded.id() == data.train.id());
  save_dataset(loaded, p2);
  CHECK(read_file(p1) == read_file(p2));
}

TEST_CASE("prefix slice keeps class balance of interleaved synthetic data") {
  SyntheticConfig cfg;
  cfg.per_class_train = 4;
  cfg.per_class_test = 4;
  cfg.seed = 2;
  auto data = make_synthetic(cfg);
  auto sliced = data.test.prefix(20, "attack");
  std::vector<int> per_class(10, 0);
  for (int l : sliced.labels) ++per_class[static_cast<std::size_t>(l)];
  for (int c = 0; c < 10; ++c) CHECK(per_class[static_cast<std::size_t>(c)] == 2);
}
