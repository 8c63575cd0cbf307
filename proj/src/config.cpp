#include "noisyforge/config.hpp"

#include <cmath>
#include <json.hpp>
#include <limits>
#include <set>

#include "noisyforge/error.hpp"
#include "noisyforge/rng.hpp"

namespace noisyforge {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;

std::string join_path(const std::string& base, const std::string& key) { return base.empty() ? key : base + "." + key; }

// Reads one JSON object, remembering which keys were consumed so that
// leftovers can be reported.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  const json* raw(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  double number(const std::string& key, double fallback) {
    const json* v = raw(key);
    if (!v) return fallback;
    if (!v->is_number()) throw ConfigError(join_path(path_, key), "expected a number");
    const double d = v->get<double>();
    if (!std::isfinite(d)) throw ConfigError(join_path(path_, key), "must be finite");
    return d;
  }

  std::size_t count(const std::string& key, std::size_t fallback) {
    const json* v = raw(key);
    if (!v) return fallback;
    if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<long long>() >= 0)) {
      throw ConfigError(join_path(path_, key), "expected a non-negative integer");
    }
    return v->get<std::size_t>();
  }

  std::uint64_t seed(const std::string& key, std::uint64_t fallback) {
    const json* v = raw(key);
    if (!v) return fallback;
    if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<long long>() >= 0)) {
      throw ConfigError(join_path(path_, key), "expected a non-negative integer");
    }
    return v->get<std::uint64_t>();
  }

  bool boolean(const std::string& key, bool fallback) {
    const json* v = raw(key);
    if (!v) return fallback;
    if (!v->is_boolean()) throw ConfigError(join_path(path_, key), "expected true or false");
    return v->get<bool>();
  }

  std::string string(const std::string& key, const std::string& fallback) {
    const json* v = raw(key);
    if (!v) return fallback;
    if (!v->is_string()) throw ConfigError(join_path(path_, key), "expected a string");
    return v->get<std::string>();
  }

  std::vector<double> numbers(const std::string& key, std::vector<double> fallback) {
    const json* v = raw(key);
    if (!v) return fallback;
    if (!v->is_array()) throw ConfigError(join_path(path_, key), "expected an array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < v->size(); ++i) {
      const auto& e = (*v)[i];
      if (!e.is_number() || !std::isfinite(e.get<double>())) {
        throw ConfigError(join_path(path_, key) + "[" + std::to_string(i) + "]", "expected a finite number");
      }
      out.push_back(e.get<double>());
    }
    return out;
  }

  Section child(const std::string& key) {
    static const json empty = json::object();
    const json* v = raw(key);
    return Section(v ? *v : empty, join_path(path_, key));
  }

  std::string field(const std::string& key) const { return join_path(path_, key); }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(join_path(path_, it.key()), "unknown key");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void require(bool ok, const std::string& field, const std::string& what) {
  if (!ok) throw ConfigError(field, what);
}

void require_increasing(const std::vector<double>& xs, const std::string& field) {
  require(!xs.empty(), field, "must not be empty");
  for (std::size_t i = 1; i < xs.size(); ++i) require(xs[i] > xs[i - 1], field, "must be strictly increasing");
}

NoiseSchedule parse_schedule(Section s) {
  const std::string kind = s.string("kind", "none");
  const double sigma_train = s.number("sigma_train", 0.0);
  require(sigma_train >= 0.0, s.field("sigma_train"), "must be >= 0");
  NoiseSchedule out;
  if (kind == "none") {
    out = NoiseSchedule::none();
  } else if (kind == "fixed") {
    out = NoiseSchedule::fixed(sigma_train);
  } else if (kind == "vant") {
    const double alpha = s.number("alpha", 1.0);
    const double theta = s.number("theta", 0.0);
    require(theta >= 0.0, s.field("theta"), "must be >= 0");
    SigmaRectify rectify = SigmaRectify::kClamp;
    const std::string r = s.string("rectify", "clamp");
    try {
      rectify = parse_sigma_rectify(r);
    } catch (const Error&) {
      throw ConfigError(s.field("rectify"), "expected clamp, abs or resample, got '" + r + "'");
    }
    out = NoiseSchedule::variance_aware(sigma_train, alpha, theta, rectify);
  } else {
    throw ConfigError(s.field("kind"), "expected none, fixed or vant, got '" + kind + "'");
  }
  s.finish();
  return out;
}

ordered_json schedule_json(const NoiseSchedule& schedule) {
  ordered_json j;
  std::visit(
      [&](const auto& n) {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, NoNoise>) {
          j["kind"] = "none";
        } else if constexpr (std::is_same_v<T, FixedNoise>) {
          j["kind"] = "fixed";
          j["sigma_train"] = n.sigma_train;
        } else {
          j["kind"] = "vant";
          j["sigma_train"] = n.sigma_train;
          j["alpha"] = n.alpha;
          j["theta"] = n.theta;
          j["rectify"] = to_string(n.rectify);
        }
      },
      schedule.variant());
  return j;
}

ordered_json optional_count(const std::optional<std::size_t>& v) { return v ? ordered_json(*v) : ordered_json(nullptr); }

std::optional<std::size_t> parse_subset(Section& s, const std::string& key) {
  if (!s.has(key)) {
    s.raw(key);
    return std::nullopt;
  }
  if (s.raw(key)->is_null()) return std::nullopt;
  const std::size_t n = s.count(key, 0);
  require(n > 0, s.field(key), "must be positive");
  return n;
}

}  // namespace

ScanGrid ExperimentConfig::scan_grid() const {
  ScanGrid grid = default_scan_grid(scan.sigma_train);
  if (!scan.alphas.empty()) grid.alphas = scan.alphas;
  if (!scan.thetas.empty()) grid.thetas = scan.thetas;
  return grid;
}

ExperimentConfig parse_experiment_config(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("<root>", std::string("invalid JSON: ") + e.what());
  }
  ExperimentConfig c;
  Section top(root, "");
  c.seed = top.seed("seed", 0);
  c.output_dir = top.string("output_dir", c.output_dir);
  require(!c.output_dir.empty(), "output_dir", "must not be empty");

  {
    Section m = top.child("model");
    c.model.preset = m.string("preset", c.model.preset);
    require(c.model.preset == "mlp2" || c.model.preset == "lenet5", m.field("preset"),
            "expected mlp2 or lenet5, got '" + c.model.preset + "'");
    c.model.logit_noise = m.boolean("logit_noise", c.model.logit_noise);
    c.model.inject_after_pool = m.boolean("inject_after_pool", c.model.inject_after_pool);
    m.finish();
  }
  {
    Section d = top.child("data");
    auto& dc = c.data;
    dc.source = d.string("source", dc.source);
    if (dc.source == "synthetic_blobs" || dc.source == "synthetic_images") {
      dc.num_classes = d.count("num_classes", dc.num_classes);
      require(dc.num_classes >= 2, d.field("num_classes"), "must be >= 2");
      dc.n_per_class = d.count("n_per_class", dc.n_per_class);
      require(dc.n_per_class >= 1, d.field("n_per_class"), "must be >= 1");
      if (dc.source == "synthetic_blobs") {
        dc.dim = d.count("dim", dc.dim);
        require(dc.dim >= 1, d.field("dim"), "must be >= 1");
        dc.separation = d.number("separation", dc.separation);
        require(dc.separation > 0.0, d.field("separation"), "must be > 0");
      } else {
        dc.channels = d.count("channels", dc.channels);
        dc.height = d.count("height", dc.height);
        dc.width = d.count("width", dc.width);
        require(dc.channels >= 1, d.field("channels"), "must be >= 1");
        require(dc.height >= 1, d.field("height"), "must be >= 1");
        require(dc.width >= 1, d.field("width"), "must be >= 1");
        dc.pixel_noise = d.number("pixel_noise", dc.pixel_noise);
        require(dc.pixel_noise >= 0.0, d.field("pixel_noise"), "must be >= 0");
      }
    } else if (dc.source == "cifar10") {
      dc.dir = d.string("dir", "");
      require(!dc.dir.empty(), d.field("dir"), "required for source cifar10");
      dc.train_subset = parse_subset(d, "train_subset");
      dc.test_subset = parse_subset(d, "test_subset");
    } else if (dc.source == "idx") {
      dc.num_classes = d.count("num_classes", 10);
      require(dc.num_classes >= 2, d.field("num_classes"), "must be >= 2");
      for (auto* f : {&dc.train_images, &dc.train_labels, &dc.test_images, &dc.test_labels}) {
        const char* key = f == &dc.train_images   ? "train_images"
                          : f == &dc.train_labels ? "train_labels"
                          : f == &dc.test_images  ? "test_images"
                                                  : "test_labels";
        *f = d.string(key, "");
        require(!f->empty(), d.field(key), "required for source idx");
      }
      dc.train_subset = parse_subset(d, "train_subset");
      dc.test_subset = parse_subset(d, "test_subset");
    } else {
      throw ConfigError(d.field("source"),
                        "expected synthetic_blobs, synthetic_images, cifar10 or idx, got '" + dc.source + "'");
    }
    d.finish();
  }
  {
    Section t = top.child("train");
    auto& tc = c.train;
    tc.lr0 = t.number("lr0", tc.lr0);
    require(tc.lr0 > 0.0, t.field("lr0"), "must be > 0");
    tc.epochs = t.count("epochs", tc.epochs);
    require(tc.epochs >= 1, t.field("epochs"), "must be >= 1");
    tc.batch_size = t.count("batch_size", tc.batch_size);
    require(tc.batch_size >= 1, t.field("batch_size"), "must be >= 1");
    tc.shuffle = t.boolean("shuffle", tc.shuffle);
    tc.log_clean_accuracy = t.boolean("log_clean_accuracy", tc.log_clean_accuracy);
    Section a = t.child("adam");
    tc.adam.beta1 = a.number("beta1", tc.adam.beta1);
    tc.adam.beta2 = a.number("beta2", tc.adam.beta2);
    tc.adam.eps = a.number("eps", tc.adam.eps);
    require(tc.adam.beta1 >= 0.0 && tc.adam.beta1 < 1.0, a.field("beta1"), "must be in [0, 1)");
    require(tc.adam.beta2 >= 0.0 && tc.adam.beta2 < 1.0, a.field("beta2"), "must be in [0, 1)");
    require(tc.adam.eps > 0.0, a.field("eps"), "must be > 0");
    a.finish();
    t.finish();
    tc.seed = c.seed;
  }
  c.train.schedule = parse_schedule(top.child("schedule"));
  {
    Section e = top.child("eval");
    auto& ec = c.eval;
    ec.sigma_min = e.number("sigma_min", ec.sigma_min);
    ec.sigma_max = e.number("sigma_max", ec.sigma_max);
    ec.sigma_step = e.number("sigma_step", ec.sigma_step);
    require(ec.sigma_min > 0.0, e.field("sigma_min"), "must be > 0 (the clean point is reported separately)");
    require(ec.sigma_max >= ec.sigma_min, e.field("sigma_max"), "must be >= sigma_min");
    require(ec.sigma_step > 0.0, e.field("sigma_step"), "must be > 0");
    ec.repeats = e.count("repeats", ec.repeats);
    require(ec.repeats >= 1, e.field("repeats"), "must be >= 1");
    ec.batch_size = e.count("batch_size", ec.batch_size);
    require(ec.batch_size >= 1, e.field("batch_size"), "must be >= 1");
    e.finish();
  }
  {
    Section u = top.child("upper_bound");
    c.upper_bound_sigmas = u.numbers("sigmas", c.upper_bound_sigmas);
    require_increasing(c.upper_bound_sigmas, u.field("sigmas"));
    require(c.upper_bound_sigmas.front() > 0.0, u.field("sigmas"), "must be > 0");
    u.finish();
  }
  {
    Section s = top.child("scan");
    auto& sc = c.scan;
    sc.sigma_train = s.number("sigma_train", sc.sigma_train);
    require(sc.sigma_train > 0.0, s.field("sigma_train"), "must be > 0");
    sc.alphas = s.numbers("alphas", {});
    sc.thetas = s.numbers("thetas", {});
    if (!sc.alphas.empty()) require_increasing(sc.alphas, s.field("alphas"));
    if (!sc.thetas.empty()) {
      require_increasing(sc.thetas, s.field("thetas"));
      require(sc.thetas.front() >= 0.0, s.field("thetas"), "must be >= 0");
    }
    if (s.has("epochs") && !s.raw("epochs")->is_null()) {
      sc.epochs = s.count("epochs", 0);
      require(*sc.epochs >= 1, s.field("epochs"), "must be >= 1");
    } else {
      s.raw("epochs");
    }
    s.finish();
  }
  top.finish();

  try {
    (void)c.eval_sigmas();
  } catch (const Error& e) {
    throw ConfigError("eval", e.what());
  }
  return c;
}

std::string resolved_config_json(const ExperimentConfig& c) {
  ordered_json j;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  j["model"] = {{"preset", c.model.preset},
                {"logit_noise", c.model.logit_noise},
                {"inject_after_pool", c.model.inject_after_pool}};
  ordered_json d;
  d["source"] = c.data.source;
  if (c.data.source == "synthetic_blobs") {
    d["num_classes"] = c.data.num_classes;
    d["n_per_class"] = c.data.n_per_class;
    d["dim"] = c.data.dim;
    d["separation"] = c.data.separation;
  } else if (c.data.source == "synthetic_images") {
    d["num_classes"] = c.data.num_classes;
    d["n_per_class"] = c.data.n_per_class;
    d["channels"] = c.data.channels;
    d["height"] = c.data.height;
    d["width"] = c.data.width;
    d["pixel_noise"] = c.data.pixel_noise;
  } else {
    if (c.data.source == "cifar10") {
      d["dir"] = c.data.dir;
    } else {
      d["num_classes"] = c.data.num_classes;
      d["train_images"] = c.data.train_images;
      d["train_labels"] = c.data.train_labels;
      d["test_images"] = c.data.test_images;
      d["test_labels"] = c.data.test_labels;
    }
    d["train_subset"] = optional_count(c.data.train_subset);
    d["test_subset"] = optional_count(c.data.test_subset);
  }
  j["data"] = d;
  j["train"] = {{"lr0", c.train.lr0},
                {"epochs", c.train.epochs},
                {"batch_size", c.train.batch_size},
                {"shuffle", c.train.shuffle},
                {"log_clean_accuracy", c.train.log_clean_accuracy},
                {"adam", {{"beta1", c.train.adam.beta1}, {"beta2", c.train.adam.beta2}, {"eps", c.train.adam.eps}}}};
  j["schedule"] = schedule_json(c.train.schedule);
  j["eval"] = {{"sigma_min", c.eval.sigma_min},
               {"sigma_max", c.eval.sigma_max},
               {"sigma_step", c.eval.sigma_step},
               {"repeats", c.eval.repeats},
               {"batch_size", c.eval.batch_size}};
  j["upper_bound"] = {{"sigmas", c.upper_bound_sigmas}};
  const ScanGrid grid = c.scan_grid();
  j["scan"] = {{"sigma_train", c.scan.sigma_train},
               {"alphas", grid.alphas},
               {"thetas", grid.thetas},
               {"epochs", optional_count(c.scan.epochs)}};
  return j.dump(2) + "\n";
}

std::pair<Dataset, Dataset> synthetic_images(std::size_t num_classes, std::size_t n_per_class, std::size_t channels,
                                             std::size_t height, std::size_t width, double pixel_noise,
                                             std::uint64_t seed) {
  if (num_classes < 2 || n_per_class == 0 || channels == 0 || height == 0 || width == 0) {
    throw UsageError("synthetic_images: empty or single-class configuration");
  }
  const std::size_t plane = channels * height * width;
  // Each class template is a sum of a few low-frequency sinusoids, so that
  // convolution and pooling have spatial structure to pick up.
  std::vector<float> templates(num_classes * plane);
  RngStream tmpl(seed, {Purpose::kData, 3, 0, 0, 0});
  for (std::size_t k = 0; k < num_classes; ++k) {
    for (std::size_t c = 0; c < channels; ++c) {
      double fx[3], fy[3], ph[3];
      for (int q = 0; q < 3; ++q) {
        fx[q] = 0.5 + 2.5 * tmpl.next_uniform();
        fy[q] = 0.5 + 2.5 * tmpl.next_uniform();
        ph[q] = 6.283185307179586 * tmpl.next_uniform();
      }
      for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) {
          double v = 0.0;
          for (int q = 0; q < 3; ++q) {
            v += std::sin(fx[q] * 6.283185307179586 * x / width + fy[q] * 6.283185307179586 * y / height + ph[q]);
          }
          templates[k * plane + (c * height + y) * width + x] = static_cast<float>(0.5 + v / 6.0);
        }
      }
    }
  }
  auto make = [&](Split split, std::uint64_t epoch) {
    const std::size_t n = num_classes * n_per_class;
    std::vector<float> px(n * plane);
    std::vector<int> labels(n);
    RngStream noise(seed, {Purpose::kData, epoch, 0, 0, 0});
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t k = i % num_classes;
      labels[i] = static_cast<int>(k);
      RngStream s = noise.with_sample(i);
      for (std::size_t p = 0; p < plane; ++p) {
        px[i * plane + p] = templates[k * plane + p] + static_cast<float>(pixel_noise * normal_draw(s));
      }
    }
    Dataset ds;
    ds.images = Tensor({n, channels, height, width}, std::move(px));
    ds.labels = std::move(labels);
    ds.num_classes = num_classes;
    ds.split = split;
    ds.source = "synthetic_images";
    return ds;
  };
  Dataset train = make(Split::kTrain, 4);
  Dataset test = make(Split::kTest, 5);
  restandardize(train, test);
  return {std::move(train), std::move(test)};
}

std::pair<Dataset, Dataset> load_experiment_data(const ExperimentConfig& config) {
  const auto& dc = config.data;
  std::pair<Dataset, Dataset> out;
  if (dc.source == "synthetic_blobs") {
    return synthetic_blobs(dc.num_classes, dc.n_per_class, dc.dim, dc.separation, config.seed);
  }
  if (dc.source == "synthetic_images") {
    return synthetic_images(dc.num_classes, dc.n_per_class, dc.channels, dc.height, dc.width, dc.pixel_noise,
                            config.seed);
  }
  if (dc.source == "cifar10") {
    out = load_cifar10_binary(dc.dir);
  } else if (dc.source == "idx") {
    out.first = load_idx(dc.train_images, dc.train_labels, dc.num_classes, nullptr, Split::kTrain);
    out.second = load_idx(dc.test_images, dc.test_labels, dc.num_classes, &out.first.normalization, Split::kTest);
  } else {
    throw ConfigError("data.source", "unsupported source '" + dc.source + "'");
  }
  if (dc.train_subset || dc.test_subset) {
    if (dc.train_subset) out.first = subsample(out.first, *dc.train_subset, config.seed);
    if (dc.test_subset) out.second = subsample(out.second, *dc.test_subset, config.seed + 1);
    restandardize(out.first, out.second);
  }
  return out;
}

ModelGraph build_experiment_model(const ExperimentConfig& config, const Dataset& train) {
  try {
    return build_preset(config.model.preset, train.sample_shape(), train.num_classes, config.seed,
                        config.injection());
  } catch (const DimensionError& e) {
    throw ConfigError("model.preset", std::string("incompatible with the data: ") + e.what());
  } catch (const UsageError& e) {
    throw ConfigError("model.preset", std::string("incompatible with the data: ") + e.what());
  }
}

}  // namespace noisyforge
