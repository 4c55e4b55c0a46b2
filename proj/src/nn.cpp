#include "aelab/nn.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "aelab/binio.hpp"

using json = nlohmann::json;

namespace aelab {

std::string to_string(Head h) { return h == Head::softmax ? "softmax" : "svm"; }
std::string to_string(Regularizer r) {
  switch (r) {
    case Regularizer::none: return "none";
    case Regularizer::l1: return "l1";
    default: return "l2";
  }
}

Head head_from_string(const std::string& s) {
  if (s == "softmax") return Head::softmax;
  if (s == "svm") return Head::svm;
  throw ConfigError("unknown head type: " + s);
}

Regularizer regularizer_from_string(const std::string& s) {
  if (s == "none") return Regularizer::none;
  if (s == "l1") return Regularizer::l1;
  if (s == "l2") return Regularizer::l2;
  throw ConfigError("unknown regularizer: " + s);
}

void ModelSpec::validate() const {
  if (num_stages < 0) throw ConfigError("num_stages must be >= 0");
  if (num_stages > 0 && blocks_per_stage < 1) throw ConfigError("blocks_per_stage must be >= 1");
  if (static_cast<int>(channels.size()) != num_stages) {
    throw ConfigError("channels must list one width per stage");
  }
  for (int c : channels) {
    if (c < 1) throw ConfigError("channel widths must be positive");
  }
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
  if (input_shape[0] != 3 || input_shape[1] < 1 || input_shape[2] < 1) {
    throw ConfigError("input shape must be (3, rows, cols)");
  }
  if (reg_lambda < 0.0) throw ConfigError("reg_lambda must be >= 0");
  if ((reg_lambda == 0.0) != (regularizer == Regularizer::none)) {
    throw ConfigError("reg_lambda must be 0 exactly when regularizer is none");
  }
}

std::string ModelSpec::to_json() const {
  json j{{"num_stages", num_stages},
         {"blocks_per_stage", blocks_per_stage},
         {"channels", channels},
         {"head", to_string(head)},
         {"regularizer", to_string(regularizer)},
         {"reg_lambda", reg_lambda},
         {"num_classes", num_classes},
         {"input_shape", {input_shape[0], input_shape[1], input_shape[2]}}};
  return j.dump();
}

ModelSpec ModelSpec::from_json(const std::string& s) {
  json j = json::parse(s);
  ModelSpec spec;
  spec.num_stages = j.at("num_stages").get<int>();
  spec.blocks_per_stage = j.at("blocks_per_stage").get<int>();
  spec.channels = j.at("channels").get<std::vector<int>>();
  spec.head = head_from_string(j.at("head").get<std::string>());
  spec.regularizer = regularizer_from_string(j.at("regularizer").get<std::string>());
  spec.reg_lambda = j.at("reg_lambda").get<double>();
  spec.num_classes = j.at("num_classes").get<int>();
  auto is = j.at("input_shape");
  spec.input_shape = {is.at(0).get<int>(), is.at(1).get<int>(), is.at(2).get<int>()};
  spec.validate();
  return spec;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must be in [0,1)");
  if (!(decay_factor > 0.0)) throw ConfigError("decay_factor must be > 0");
  if (clip_norm < 0.0) throw ConfigError("clip_norm must be >= 0");
}

std::string TrainConfig::to_json() const {
  json j{{"epochs", epochs},
         {"batch_size", batch_size},
         {"learning_rate", learning_rate},
         {"momentum", momentum},
         {"decay_epochs", decay_epochs},
         {"decay_factor", decay_factor},
         {"clip_norm", clip_norm},
         {"seed", seed}};
  return j.dump();
}

TrainConfig TrainConfig::from_json(const std::string& s) {
  json j = json::parse(s);
  TrainConfig cfg;
  cfg.epochs = j.at("epochs").get<int>();
  cfg.batch_size = j.at("batch_size").get<int>();
  cfg.learning_rate = j.at("learning_rate").get<double>();
  cfg.momentum = j.at("momentum").get<double>();
  cfg.decay_epochs = j.at("decay_epochs").get<std::vector<int>>();
  cfg.decay_factor = j.at("decay_factor").get<double>();
  cfg.clip_norm = j.at("clip_norm").get<double>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  cfg.validate();
  return cfg;
}

// --- construction -------------------------------------------------------------

static Tensor he_init(Shape shape, double fan_in, Rng& rng) {
  double stddev = std::sqrt(2.0 / fan_in);
  std::vector<double> v(static_cast<std::size_t>(numel(shape)));
  for (double& x : v) x = stddev * rng.normal();
  return Tensor::from_data(std::move(shape), std::move(v), true);
}

TrainedModel build(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(derive_seed(seed, "model-init"));
  std::vector<NamedParam> params;
  auto conv_param = [&](const std::string& name, int co, int ci, int k) {
    params.push_back({name + ".w", he_init({co, ci, k, k}, ci * k * k, rng), true});
    params.push_back({name + ".b", Tensor::zeros({co}, true), false});
  };
  int in_ch = 3;
  if (spec.num_stages > 0) {
    conv_param("stem", spec.channels[0], 3, 3);
    in_ch = spec.channels[0];
    for (int s = 0; s < spec.num_stages; ++s) {
      int out_ch = spec.channels[static_cast<std::size_t>(s)];
      for (int b = 0; b < spec.blocks_per_stage; ++b) {
        std::string base = "stage" + std::to_string(s) + ".block" + std::to_string(b);
        int stride = (s > 0 && b == 0) ? 2 : 1;
        conv_param(base + ".conv1", out_ch, in_ch, 3);
        conv_param(base + ".conv2", out_ch, out_ch, 3);
        if (stride != 1 || in_ch != out_ch) {
          conv_param(base + ".proj", out_ch, in_ch, 1);
        }
        in_ch = out_ch;
      }
    }
  }
  {
    double fan_in = static_cast<double>(in_ch);
    double stddev = std::sqrt(1.0 / fan_in);
    std::vector<double> v(static_cast<std::size_t>(in_ch) * spec.num_classes);
    for (double& x : v) x = stddev * rng.normal();
    params.push_back({"head.w", Tensor::from_data({in_ch, spec.num_classes}, std::move(v), true),
                      true});
    params.push_back({"head.b", Tensor::zeros({spec.num_classes}, true), false});
  }
  TrainMeta meta;
  meta.seed = seed;
  return TrainedModel(spec, std::move(params), meta);
}

TrainedModel::TrainedModel(ModelSpec spec, std::vector<NamedParam> params, TrainMeta meta)
    : spec_(std::move(spec)), params_(std::move(params)), meta_(meta) {}

std::string TrainedModel::id() const {
  Hasher h;
  h.update(spec_.to_json());
  for (const auto& p : params_) {
    h.update(p.name);
    for (int e : p.tensor.shape()) h.update_u64(static_cast<std::uint64_t>(e));
    h.update_doubles(p.tensor.data().data(), p.tensor.data().size());
  }
  return h.hex();
}

void TrainedModel::check_input(const Tensor& images) const {
  const auto& s = images.shape();
  if (s.size() != 4 || s[1] != spec_.input_shape[0] || s[2] != spec_.input_shape[1] ||
      s[3] != spec_.input_shape[2]) {
    throw ShapeError("model expects (B," + std::to_string(spec_.input_shape[0]) + "," +
                     std::to_string(spec_.input_shape[1]) + "," +
                     std::to_string(spec_.input_shape[2]) + "), got " + shape_str(s));
  }
}

Tensor TrainedModel::forward(Tape* tape, const Tensor& images, bool param_grads) const {
  check_input(images);
  // bind the parameter set once per invocation
  std::size_t cursor = 0;
  auto next_param = [&](const std::string& name) {
    const NamedParam& p = params_[cursor];
    if (p.name != name) throw Error("parameter order mismatch: " + p.name + " vs " + name);
    ++cursor;
    return param_grads ? p.tensor : p.tensor.detached();
  };

  // fixed affine preprocess: [0,255] pixels -> roughly [-1,1], zero-centered
  Tensor x = ops::scalar_mul(
      tape, ops::add(tape, images, Tensor::full(images.shape(), -127.5)), 1.0 / 127.5);
  int in_ch = 3;
  if (spec_.num_stages > 0) {
    Tensor w = next_param("stem.w"), b = next_param("stem.b");
    x = ops::relu(tape, ops::bias_add(tape, ops::conv2d(tape, x, w, 1, 1), b));
    in_ch = spec_.channels[0];
    for (int s = 0; s < spec_.num_stages; ++s) {
      int out_ch = spec_.channels[static_cast<std::size_t>(s)];
      for (int bidx = 0; bidx < spec_.blocks_per_stage; ++bidx) {
        std::string base = "stage" + std::to_string(s) + ".block" + std::to_string(bidx);
        int stride = (s > 0 && bidx == 0) ? 2 : 1;
        Tensor w1 = next_param(base + ".conv1.w"), b1 = next_param(base + ".conv1.b");
        Tensor w2 = next_param(base + ".conv2.w"), b2 = next_param(base + ".conv2.b");
        Tensor h = ops::relu(tape, ops::bias_add(tape, ops::conv2d(tape, x, w1, stride, 1), b1));
        h = ops::bias_add(tape, ops::conv2d(tape, h, w2, 1, 1), b2);
        Tensor shortcut = x;
        if (stride != 1 || in_ch != out_ch) {
          Tensor wp = next_param(base + ".proj.w"), bp = next_param(base + ".proj.b");
          shortcut = ops::bias_add(tape, ops::conv2d(tape, x, wp, stride, 0), bp);
        }
        x = ops::relu(tape, ops::add(tape, h, shortcut));
        in_ch = out_ch;
      }
    }
    x = ops::global_average_pool(tape, x);
  } else {
    // degenerate stage-free config: plain linear model on pooled pixels
    x = ops::global_average_pool(tape, x);
  }
  Tensor w = next_param("head.w"), b = next_param("head.b");
  return ops::bias_add(tape, ops::matmul(tape, x, w), b);
}

Tensor TrainedModel::training_loss(Tape* tape, const Tensor& images,
                                   const std::vector<int>& labels, bool param_grads) const {
  Tensor scores = forward(tape, images, param_grads);
  Tensor data_loss = spec_.head == Head::softmax
                         ? ops::softmax_cross_entropy(tape, scores, labels)
                         : ops::multiclass_hinge(tape, scores, labels);
  if (spec_.regularizer == Regularizer::none) return data_loss;
  Tensor penalty;
  for (const auto& p : params_) {
    if (!p.penalized) continue;
    Tensor w = param_grads ? p.tensor : p.tensor.detached();
    Tensor term = spec_.regularizer == Regularizer::l1
                      ? ops::reduce_sum(tape, ops::abs(tape, w))
                      : ops::reduce_sum(tape, ops::square(tape, w));
    penalty = penalty.defined() ? ops::add(tape, penalty, term) : term;
  }
  return ops::add(tape, data_loss, ops::scalar_mul(tape, penalty, spec_.reg_lambda));
}

double TrainedModel::penalty_value() const {
  double acc = 0.0;
  for (const auto& p : params_) {
    if (!p.penalized) continue;
    for (double v : p.tensor.data()) {
      acc += spec_.regularizer == Regularizer::l1 ? std::fabs(v) : v * v;
    }
  }
  return acc;
}

Prediction TrainedModel::predict(const Tensor& images) const {
  Tensor scores = forward(nullptr, images, false);
  Prediction out;
  out.num_classes = spec_.num_classes;
  out.scores.assign(scores.data().begin(), scores.data().end());
  int b = scores.shape()[0];
  out.classes.resize(static_cast<std::size_t>(b));
  for (int i = 0; i < b; ++i) {
    out.classes[static_cast<std::size_t>(i)] = ops::argmax_tie_low(
        std::span<const double>(out.scores.data() + static_cast<std::size_t>(i) * spec_.num_classes,
                                static_cast<std::size_t>(spec_.num_classes)));
  }
  return out;
}

Prediction TrainedModel::predict_split(const DatasetSplit& split, int batch_size) const {
  Prediction out;
  out.num_classes = spec_.num_classes;
  for (int begin = 0; begin < split.count(); begin += batch_size) {
    int end = std::min(split.count(), begin + batch_size);
    Prediction p = predict(split.batch_tensor(begin, end));
    out.classes.insert(out.classes.end(), p.classes.begin(), p.classes.end());
    out.scores.insert(out.scores.end(), p.scores.begin(), p.scores.end());
  }
  return out;
}

double accuracy(const TrainedModel& model, const DatasetSplit& split) {
  Prediction p = model.predict_split(split);
  int hits = 0;
  for (int i = 0; i < split.count(); ++i) {
    if (p.classes[static_cast<std::size_t>(i)] == split.labels[static_cast<std::size_t>(i)]) {
      ++hits;
    }
  }
  return static_cast<double>(hits) / split.count();
}

// --- training -------------------------------------------------------------------

TrainedModel train(TrainedModel model, const DatasetSplit& train_split,
                   const DatasetSplit& test_split, const TrainConfig& cfg) {
  cfg.validate();
  if (train_split.count() == 0) throw PreconditionError("train: empty dataset");
  train_split.validate();
  for (int l : train_split.labels) {
    if (l < 0 || l >= model.spec().num_classes) {
      throw PreconditionError("train: label outside [0, num_classes)");
    }
  }

  // momentum buffers, aligned with parameter order
  std::vector<std::vector<double>> velocity;
  for (const auto& p : model.parameters()) {
    velocity.emplace_back(p.tensor.data().size(), 0.0);
  }

  std::vector<int> order(static_cast<std::size_t>(train_split.count()));
  for (int i = 0; i < train_split.count(); ++i) order[static_cast<std::size_t>(i)] = i;

  double lr = cfg.learning_rate;
  const std::size_t image_size = static_cast<std::size_t>(train_split.image_size());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (std::find(cfg.decay_epochs.begin(), cfg.decay_epochs.end(), epoch) !=
        cfg.decay_epochs.end()) {
      lr *= cfg.decay_factor;
    }
    Rng shuffle_rng(derive_seed(cfg.seed, "shuffle-epoch-" + std::to_string(epoch)));
    shuffle_rng.shuffle(order);
    for (int begin = 0; begin < train_split.count(); begin += cfg.batch_size) {
      int end = std::min(train_split.count(), begin + cfg.batch_size);
      int b = end - begin;
      std::vector<double> pixels(static_cast<std::size_t>(b) * image_size);
      std::vector<int> labels(static_cast<std::size_t>(b));
      for (int i = 0; i < b; ++i) {
        int src = order[static_cast<std::size_t>(begin + i)];
        auto px = train_split.image(src);
        std::copy(px.begin(), px.end(), pixels.begin() + static_cast<std::ptrdiff_t>(i * image_size));
        labels[static_cast<std::size_t>(i)] = train_split.labels[static_cast<std::size_t>(src)];
      }
      Tensor images = Tensor::from_data({b, train_split.image_shape[0], train_split.image_shape[1],
                                         train_split.image_shape[2]},
                                        std::move(pixels));
      Tape tape;
      Tensor loss;
      try {
        loss = model.training_loss(&tape, images, labels, true);
        tape.backward(loss);
      } catch (const ValueError& e) {
        throw ValueError("training diverged at epoch " + std::to_string(epoch) + ": " + e.what());
      }
      double scale = 1.0;
      if (cfg.clip_norm > 0.0) {
        double sq = 0.0;
        for (const auto& p : model.parameters()) {
          if (!p.tensor.has_grad()) continue;
          for (double g : p.tensor.grad()) sq += g * g;
        }
        double norm = std::sqrt(sq);
        if (norm > cfg.clip_norm) scale = cfg.clip_norm / norm;
      }
      std::size_t pi = 0;
      for (auto& p : model.mutable_parameters()) {
        auto& vel = velocity[pi++];
        if (!p.tensor.has_grad()) continue;
        auto g = p.tensor.grad();
        auto vals = p.tensor.mutable_data();
        for (std::size_t k = 0; k < vel.size(); ++k) {
          vel[k] = cfg.momentum * vel[k] + scale * g[k];
          vals[k] -= lr * vel[k];
        }
      }
    }
  }

  TrainMeta meta = model.meta();
  meta.epochs = cfg.epochs;
  meta.train_accuracy = accuracy(model, train_split);
  meta.test_accuracy = accuracy(model, test_split);
  model.set_meta(meta);
  return model;
}

TrainedModel replace_head_svm(const TrainedModel& model, const DatasetSplit& train_split,
                              const DatasetSplit& test_split, const TrainConfig& cfg) {
  if (model.spec().head != Head::softmax) {
    throw PreconditionError("replace_head_svm: model already has an svm head");
  }
  ModelSpec spec = model.spec();
  spec.head = Head::svm;
  std::vector<NamedParam> params;
  Rng rng(derive_seed(cfg.seed, "svm-head-reinit"));
  for (const auto& p : model.parameters()) {
    if (p.name == "head.w") {
      const auto& sh = p.tensor.shape();
      double stddev = std::sqrt(1.0 / sh[0]);
      std::vector<double> v(p.tensor.data().size());
      for (double& x : v) x = stddev * rng.normal();
      params.push_back({p.name, Tensor::from_data(sh, std::move(v), true), p.penalized});
    } else if (p.name == "head.b") {
      params.push_back({p.name, Tensor::zeros(p.tensor.shape(), true), p.penalized});
    } else {
      params.push_back({p.name, p.tensor.clone(), p.penalized});
    }
  }
  TrainMeta meta;
  meta.seed = cfg.seed;
  TrainedModel fresh(std::move(spec), std::move(params), meta);
  return train(std::move(fresh), train_split, test_split, cfg);
}

// --- serialization ----------------------------------------------------------------

static constexpr char kModelMagic[4] = {'A', 'E', 'L', 'M'};

void save_model(const TrainedModel& model, const std::string& path) {
  json header{{"spec", json::parse(model.spec().to_json())},
              {"meta",
               {{"epochs", model.meta().epochs},
                {"seed", model.meta().seed},
                {"train_accuracy", model.meta().train_accuracy},
                {"test_accuracy", model.meta().test_accuracy}}}};
  binio::Writer w;
  w.magic(kModelMagic);
  w.u32(1);
  w.str(header.dump());
  w.u32(static_cast<std::uint32_t>(model.parameters().size()));
  for (const auto& p : model.parameters()) {
    w.str(p.name);
    w.u8(p.penalized ? 1 : 0);
    w.i32_array(p.tensor.shape());
    w.f64_array(p.tensor.data());
  }
  w.save(path);
}

TrainedModel load_model(const std::string& path) {
  binio::Reader r = binio::open(path);
  r.expect_magic(kModelMagic);
  if (r.u32() != 1) throw IoError(path + ": unsupported model version");
  json header = json::parse(r.str());
  ModelSpec spec = ModelSpec::from_json(header.at("spec").dump());
  TrainMeta meta;
  meta.epochs = header.at("meta").at("epochs").get<int>();
  meta.seed = header.at("meta").at("seed").get<std::uint64_t>();
  meta.train_accuracy = header.at("meta").at("train_accuracy").get<double>();
  meta.test_accuracy = header.at("meta").at("test_accuracy").get<double>();
  std::uint32_t nblocks = r.u32();
  std::vector<NamedParam> params;
  params.reserve(nblocks);
  for (std::uint32_t i = 0; i < nblocks; ++i) {
    std::string name = r.str();
    bool penalized = r.u8() != 0;
    Shape shape = r.i32_array();
    std::vector<double> data = r.f64_array();
    params.push_back({name, Tensor::from_data(std::move(shape), std::move(data), true), penalized});
  }
  r.expect_end();
  return TrainedModel(std::move(spec), std::move(params), meta);
}

}  // namespace aelab
