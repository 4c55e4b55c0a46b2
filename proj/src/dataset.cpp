#include "aelab/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include <json.hpp>

#include "aelab/binio.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace aelab {

std::span<const double> DatasetSplit::image(int i) const {
  if (i < 0 || i >= count()) throw PreconditionError("image index out of range");
  return std::span<const double>(images.data() + static_cast<std::size_t>(i) * image_size(),
                                 static_cast<std::size_t>(image_size()));
}

Tensor DatasetSplit::image_tensor(int i, bool requires_grad) const {
  auto px = image(i);
  return Tensor::from_data({image_shape[0], image_shape[1], image_shape[2]},
                           std::vector<double>(px.begin(), px.end()), requires_grad);
}

Tensor DatasetSplit::batch_tensor(int begin, int end) const {
  if (begin < 0 || end > count() || begin >= end) {
    throw PreconditionError("batch_tensor: bad range");
  }
  std::size_t isz = static_cast<std::size_t>(image_size());
  std::vector<double> v(images.begin() + static_cast<std::ptrdiff_t>(begin * isz),
                        images.begin() + static_cast<std::ptrdiff_t>(end * isz));
  return Tensor::from_data({end - begin, image_shape[0], image_shape[1], image_shape[2]},
                           std::move(v));
}

void DatasetSplit::validate() const {
  if (num_classes < 2) throw ConfigError("dataset needs at least 2 classes");
  if (image_shape[0] != 3) throw ConfigError("image channel count must be 3");
  if (image_shape[1] < 1 || image_shape[2] < 1) throw ConfigError("bad image size");
  if (static_cast<std::int64_t>(images.size()) !=
      static_cast<std::int64_t>(labels.size()) * image_size()) {
    throw ConfigError("dataset: image/label counts disagree");
  }
  for (int l : labels) {
    if (l < 0 || l >= num_classes) throw ConfigError("dataset label out of range");
  }
  for (double v : images) {
    if (!(v >= 0.0 && v <= 255.0)) throw ValueError("dataset pixel outside [0,255]");
  }
}

std::string DatasetSplit::id() const {
  Hasher h;
  h.update(source);
  h.update_u64(static_cast<std::uint64_t>(num_classes));
  for (int e : image_shape) h.update_u64(static_cast<std::uint64_t>(e));
  h.update(labels.data(), labels.size() * sizeof(int));
  h.update_doubles(images.data(), images.size());
  return h.hex();
}

DatasetSplit DatasetSplit::prefix(int n, const std::string& new_name) const {
  if (n < 1 || n > count()) throw PreconditionError("prefix: bad size");
  DatasetSplit out = *this;
  out.name = new_name;
  out.labels.resize(static_cast<std::size_t>(n));
  out.images.resize(static_cast<std::size_t>(n) * image_size());
  return out;
}

// --- CIFAR-10 binary ---------------------------------------------------------

static constexpr int kCifarDim = 32;
static constexpr std::size_t kCifarRecord = 1 + 3 * 1024;

DatasetSplit decode_cifar10_records(const std::vector<unsigned char>& bytes,
                                    const std::string& split_name) {
  if (bytes.size() % kCifarRecord != 0) {
    throw IoError("malformed CIFAR-10 file: size " + std::to_string(bytes.size()) +
                  " is not a multiple of " + std::to_string(kCifarRecord) +
                  " (first partial record at byte offset " +
                  std::to_string((bytes.size() / kCifarRecord) * kCifarRecord) + ")");
  }
  std::size_t n = bytes.size() / kCifarRecord;
  DatasetSplit out;
  out.name = split_name;
  out.source = "cifar10-binary";
  out.num_classes = 10;
  out.image_shape = {3, kCifarDim, kCifarDim};
  out.labels.reserve(n);
  out.images.reserve(n * 3 * 1024);
  for (std::size_t r = 0; r < n; ++r) {
    const unsigned char* rec = bytes.data() + r * kCifarRecord;
    if (rec[0] > 9) {
      throw IoError("malformed CIFAR-10 record: label byte " + std::to_string(int(rec[0])) +
                    " at byte offset " + std::to_string(r * kCifarRecord));
    }
    out.labels.push_back(rec[0]);
    for (std::size_t i = 0; i < 3 * 1024; ++i) {
      out.images.push_back(static_cast<double>(rec[1 + i]));
    }
  }
  return out;
}

std::vector<unsigned char> encode_cifar10_records(const DatasetSplit& split) {
  if (split.image_shape != std::array<int, 3>{3, kCifarDim, kCifarDim}) {
    throw PreconditionError("encode_cifar10_records: split is not 3x32x32");
  }
  std::vector<unsigned char> bytes;
  bytes.reserve(split.labels.size() * kCifarRecord);
  for (int r = 0; r < split.count(); ++r) {
    bytes.push_back(static_cast<unsigned char>(split.labels[static_cast<std::size_t>(r)]));
    auto px = split.image(r);
    for (double v : px) {
      double rounded = std::nearbyint(v);
      if (rounded < 0.0 || rounded > 255.0 || rounded != v) {
        throw ValueError("encode_cifar10_records: pixel value " + std::to_string(v) +
                         " is not an exact byte");
      }
      bytes.push_back(static_cast<unsigned char>(rounded));
    }
  }
  return bytes;
}

static std::vector<unsigned char> read_binary_file(const fs::path& p) {
  std::string s = read_file(p.string());
  return std::vector<unsigned char>(s.begin(), s.end());
}

DatasetSplits ingest_cifar10(const std::string& dir, const Cifar10Options& opts) {
  fs::path root(dir);
  std::vector<unsigned char> train_bytes;
  for (int i = 1; i <= 5; ++i) {
    fs::path p = root / ("data_batch_" + std::to_string(i) + ".bin");
    if (!fs::exists(p)) throw IoError("missing CIFAR-10 file: " + p.string());
    auto b = read_binary_file(p);
    train_bytes.insert(train_bytes.end(), b.begin(), b.end());
  }
  fs::path tp = root / "test_batch.bin";
  if (!fs::exists(tp)) throw IoError("missing CIFAR-10 file: " + tp.string());

  DatasetSplits out;
  out.train = decode_cifar10_records(train_bytes, "train");
  out.test = decode_cifar10_records(read_binary_file(tp), "test");

  if (opts.subsample_per_split) {
    out.train = stratified_subsample(out.train, *opts.subsample_per_split,
                                     derive_seed(opts.seed, "cifar-subsample-train"));
    out.test = stratified_subsample(out.test, *opts.subsample_per_split,
                                    derive_seed(opts.seed, "cifar-subsample-test"));
  }
  if (opts.downscale_to) {
    out.train = bilinear_downscale(out.train, *opts.downscale_to);
    out.test = bilinear_downscale(out.test, *opts.downscale_to);
  }
  return out;
}

// --- synthetic ----------------------------------------------------------------

// Class signal: a per-channel color cast (survives the shift jitter, so a
// linear probe always has something to grab) plus low-frequency plane waves
// drawn from a class-specific stream. Per image the wave part is circularly
// shifted and everything is buried in Gaussian pixel noise, which is what
// makes desk-scale models imperfect and their boundaries attackable.
struct ClassPattern {
  std::array<double, 3> cast;
  std::vector<double> waves;  // 3 * size * size
};

static ClassPattern class_pattern(int cls, int size, double amplitude, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "class-pattern-" + std::to_string(cls)));
  ClassPattern pat;
  pat.waves.assign(static_cast<std::size_t>(3) * size * size, 0.0);
  const int waves = 2;
  for (int ch = 0; ch < 3; ++ch) {
    pat.cast[static_cast<std::size_t>(ch)] = 0.5 * amplitude * rng.uniform(-1.0, 1.0);
    for (int w = 0; w < waves; ++w) {
      double fx = rng.below(2) + 1.0;
      double fy = rng.below(2) + 1.0;
      double phase = rng.uniform(0.0, 2.0 * M_PI);
      double amp = amplitude * rng.uniform(0.5, 1.0) / waves;
      for (int i = 0; i < size; ++i) {
        for (int j = 0; j < size; ++j) {
          pat.waves[(static_cast<std::size_t>(ch) * size + i) * size + j] +=
              amp * std::sin(2.0 * M_PI * (fx * i + fy * j) / size + phase);
        }
      }
    }
  }
  return pat;
}

static void synth_split(DatasetSplit& out, const SyntheticConfig& cfg, int per_class,
                        const std::vector<ClassPattern>& patterns, Rng& rng) {
  const int size = cfg.image_size;
  const std::size_t isz = static_cast<std::size_t>(3) * size * size;
  // interleave classes so any prefix slice stays balanced
  for (int rep = 0; rep < per_class; ++rep) {
    for (int cls = 0; cls < cfg.num_classes; ++cls) {
      out.labels.push_back(cls);
      int di = static_cast<int>(rng.below(2 * cfg.max_shift + 1)) - cfg.max_shift;
      int dj = static_cast<int>(rng.below(2 * cfg.max_shift + 1)) - cfg.max_shift;
      double gain = rng.uniform(0.8, 1.2);
      const auto& pat = patterns[static_cast<std::size_t>(cls)];
      std::vector<double> img(isz);
      for (int ch = 0; ch < 3; ++ch) {
        double base = 127.5 + gain * pat.cast[static_cast<std::size_t>(ch)];
        for (int i = 0; i < size; ++i) {
          for (int j = 0; j < size; ++j) {
            int si = ((i + di) % size + size) % size;
            int sj = ((j + dj) % size + size) % size;
            double v = base +
                       gain * pat.waves[(static_cast<std::size_t>(ch) * size + si) * size + sj] +
                       cfg.noise_sigma * rng.normal();
            img[(static_cast<std::size_t>(ch) * size + i) * size + j] =
                std::clamp(v, 0.0, 255.0);
          }
        }
      }
      out.images.insert(out.images.end(), img.begin(), img.end());
    }
  }
}

DatasetSplits make_synthetic(const SyntheticConfig& cfg) {
  if (cfg.image_size < 4) throw ConfigError("synthetic image size must be >= 4");
  if (cfg.num_classes < 2) throw ConfigError("synthetic needs >= 2 classes");
  if (cfg.per_class_train < 1 || cfg.per_class_test < 1) {
    throw ConfigError("synthetic per-class counts must be >= 1");
  }
  std::vector<ClassPattern> patterns;
  patterns.reserve(static_cast<std::size_t>(cfg.num_classes));
  for (int c = 0; c < cfg.num_classes; ++c) {
    patterns.push_back(class_pattern(c, cfg.image_size, cfg.signal_amplitude, cfg.seed));
  }
  DatasetSplits out;
  for (DatasetSplit* s : {&out.train, &out.test}) {
    s->source = "synthetic";
    s->num_classes = cfg.num_classes;
    s->image_shape = {3, cfg.image_size, cfg.image_size};
  }
  out.train.name = "train";
  out.test.name = "test";
  Rng train_rng(derive_seed(cfg.seed, "synthetic-train"));
  Rng test_rng(derive_seed(cfg.seed, "synthetic-test"));
  synth_split(out.train, cfg, cfg.per_class_train, patterns, train_rng);
  synth_split(out.test, cfg, cfg.per_class_test, patterns, test_rng);
  return out;
}

double linear_probe_accuracy(const DatasetSplit& train, const DatasetSplit& test) {
  const std::size_t isz = static_cast<std::size_t>(train.image_size());
  std::vector<std::vector<double>> mean(static_cast<std::size_t>(train.num_classes),
                                        std::vector<double>(isz, 0.0));
  std::vector<int> counts(static_cast<std::size_t>(train.num_classes), 0);
  for (int i = 0; i < train.count(); ++i) {
    auto px = train.image(i);
    auto& m = mean[static_cast<std::size_t>(train.labels[static_cast<std::size_t>(i)])];
    for (std::size_t k = 0; k < isz; ++k) m[k] += px[k];
    ++counts[static_cast<std::size_t>(train.labels[static_cast<std::size_t>(i)])];
  }
  for (int c = 0; c < train.num_classes; ++c) {
    if (counts[static_cast<std::size_t>(c)] == 0) continue;
    for (double& v : mean[static_cast<std::size_t>(c)]) v /= counts[static_cast<std::size_t>(c)];
  }
  int hits = 0;
  for (int i = 0; i < test.count(); ++i) {
    auto px = test.image(i);
    int best = 0;
    double best_score = -1e300;
    for (int c = 0; c < train.num_classes; ++c) {
      const auto& m = mean[static_cast<std::size_t>(c)];
      double dot = 0.0, nrm = 0.0;
      for (std::size_t k = 0; k < isz; ++k) {
        dot += m[k] * px[k];
        nrm += m[k] * m[k];
      }
      double score = dot - 0.5 * nrm;  // nearest centroid, linear in px
      if (score > best_score) {
        best_score = score;
        best = c;
      }
    }
    if (best == test.labels[static_cast<std::size_t>(i)]) ++hits;
  }
  return static_cast<double>(hits) / test.count();
}

DatasetSplit stratified_subsample(const DatasetSplit& in, int n, std::uint64_t seed) {
  if (n < in.num_classes || n > in.count()) {
    throw ConfigError("stratified_subsample: bad target count " + std::to_string(n));
  }
  if (n % in.num_classes != 0) {
    throw ConfigError("stratified_subsample: count must divide evenly across classes");
  }
  int per_class = n / in.num_classes;
  std::vector<std::vector<int>> by_class(static_cast<std::size_t>(in.num_classes));
  for (int i = 0; i < in.count(); ++i) {
    by_class[static_cast<std::size_t>(in.labels[static_cast<std::size_t>(i)])].push_back(i);
  }
  Rng rng(seed);
  std::vector<int> picked;
  for (int c = 0; c < in.num_classes; ++c) {
    auto& pool = by_class[static_cast<std::size_t>(c)];
    if (static_cast<int>(pool.size()) < per_class) {
      throw ConfigError("stratified_subsample: class " + std::to_string(c) +
                        " has only " + std::to_string(pool.size()) + " images");
    }
    rng.shuffle(pool);
    picked.insert(picked.end(), pool.begin(), pool.begin() + per_class);
  }
  std::sort(picked.begin(), picked.end());  // keep original ordering
  DatasetSplit out;
  out.name = in.name;
  out.source = in.source;
  out.num_classes = in.num_classes;
  out.image_shape = in.image_shape;
  for (int i : picked) {
    out.labels.push_back(in.labels[static_cast<std::size_t>(i)]);
    auto px = in.image(i);
    out.images.insert(out.images.end(), px.begin(), px.end());
  }
  return out;
}

DatasetSplit bilinear_downscale(const DatasetSplit& in, int target) {
  if (target < 1 || target > in.image_shape[1]) {
    throw ConfigError("bilinear_downscale: bad target size");
  }
  const int H = in.image_shape[1], W = in.image_shape[2];
  DatasetSplit out;
  out.name = in.name;
  out.source = in.source;
  out.num_classes = in.num_classes;
  out.image_shape = {3, target, target};
  out.labels = in.labels;
  out.images.resize(static_cast<std::size_t>(in.count()) * 3 * target * target);
  const double sy = static_cast<double>(H) / target;
  const double sx = static_cast<double>(W) / target;
  for (int n = 0; n < in.count(); ++n) {
    auto src = in.image(n);
    for (int ch = 0; ch < 3; ++ch) {
      for (int i = 0; i < target; ++i) {
        // half-pixel centers (align_corners = false)
        double fy = std::clamp((i + 0.5) * sy - 0.5, 0.0, static_cast<double>(H - 1));
        int y0 = static_cast<int>(fy);
        int y1 = std::min(y0 + 1, H - 1);
        double wy = fy - y0;
        for (int j = 0; j < target; ++j) {
          double fx = std::clamp((j + 0.5) * sx - 0.5, 0.0, static_cast<double>(W - 1));
          int x0 = static_cast<int>(fx);
          int x1 = std::min(x0 + 1, W - 1);
          double wx = fx - x0;
          auto at = [&](int y, int x) {
            return src[(static_cast<std::size_t>(ch) * H + y) * W + x];
          };
          double v = (1 - wy) * ((1 - wx) * at(y0, x0) + wx * at(y0, x1)) +
                     wy * ((1 - wx) * at(y1, x0) + wx * at(y1, x1));
          out.images[((static_cast<std::size_t>(n) * 3 + ch) * target + i) * target + j] = v;
        }
      }
    }
  }
  return out;
}

// --- container file -----------------------------------------------------------

static constexpr char kDatasetMagic[4] = {'A', 'E', 'D', 'S'};

void save_dataset(const DatasetSplit& split, const std::string& path) {
  json header{{"name", split.name},
              {"source", split.source},
              {"num_classes", split.num_classes},
              {"shape", {split.image_shape[0], split.image_shape[1], split.image_shape[2]}},
              {"count", split.count()}};
  binio::Writer w;
  w.magic(kDatasetMagic);
  w.u32(1);
  w.str(header.dump());
  w.i32_array(split.labels);
  w.f64_array(split.images);
  w.save(path);
}

DatasetSplit load_dataset(const std::string& path) {
  binio::Reader r = binio::open(path);
  r.expect_magic(kDatasetMagic);
  if (r.u32() != 1) throw IoError(path + ": unsupported dataset version");
  json header = json::parse(r.str());
  DatasetSplit out;
  out.name = header.at("name").get<std::string>();
  out.source = header.at("source").get<std::string>();
  out.num_classes = header.at("num_classes").get<int>();
  auto sh = header.at("shape");
  out.image_shape = {sh.at(0).get<int>(), sh.at(1).get<int>(), sh.at(2).get<int>()};
  out.labels = r.i32_array();
  out.images = r.f64_array();
  r.expect_end();
  if (out.count() != header.at("count").get<int>()) {
    throw IoError(path + ": count mismatch between header and payload");
  }
  return out;
}

}  // namespace aelab
