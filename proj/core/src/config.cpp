#include "batchal/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "batchal/error.hpp"

namespace batchal {

namespace {

using nlohmann::json;

// Line of the first `"key"` occurrence in the source text, or 0.
std::size_t line_of_key(const std::string& text, const std::string& key) {
  if (text.empty()) return 0;
  const std::string needle = "\"" + key + "\"";
  const std::size_t pos = text.find(needle);
  if (pos == std::string::npos) return 0;
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(pos), '\n'));
}

// Typed access to one JSON object, rejecting keys nobody asked for.
class Reader {
 public:
  Reader(const json& obj, const std::string& text, std::string scope)
      : obj_(obj), text_(text), scope_(std::move(scope)) {
    if (!obj_.is_object()) fail(scope_.empty() ? "config" : scope_, "must be a JSON object");
  }

  [[noreturn]] void fail(const std::string& key, const std::string& msg) const {
    const std::string leaf = key.substr(key.rfind('.') + 1);
    const std::size_t line = line_of_key(text_, leaf);
    std::string where = line ? "line " + std::to_string(line) + ": " : "";
    throw Error(Errc::ConfigError, where + "'" + key + "' " + msg);
  }

  const std::string& text() const noexcept { return text_; }

  std::string path(const std::string& key) const { return scope_.empty() ? key : scope_ + "." + key; }

  bool has(const std::string& key) {
    seen_.insert(key);
    return obj_.contains(key) && !obj_.at(key).is_null();
  }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return obj_.at(key);
  }

  template <typename T>
  T get(const std::string& key) {
    seen_.insert(key);
    const json& v = obj_.at(key);
    if constexpr (std::is_same_v<T, double>) {
      if (!v.is_number()) fail(path(key), "must be a number");
      return v.get<double>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) fail(path(key), "must be an integer");
      if constexpr (std::is_unsigned_v<T>) {
        if (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0) {
          fail(path(key), "must be non-negative");
        }
      }
      return v.get<T>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) fail(path(key), "must be a string");
      return v.get<std::string>();
    } else {
      return v.get<T>();
    }
  }

  template <typename T>
  void maybe(const std::string& key, T& out) {
    if (has(key)) out = get<T>(key);
  }

  template <typename T>
  std::vector<T> list(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_array()) fail(path(key), "must be an array");
    std::vector<T> out;
    for (const json& item : v) {
      if constexpr (std::is_same_v<T, std::string>) {
        if (!item.is_string()) fail(path(key), "must contain strings");
      } else {
        if (!item.is_number_integer() || (item.is_number_integer() && !item.is_number_unsigned() &&
                                          item.get<long long>() < 0)) {
          fail(path(key), "must contain non-negative integers");
        }
      }
      out.push_back(item.get<T>());
    }
    return out;
  }

  void finish() const {
    for (const auto& [key, value] : obj_.items()) {
      if (!seen_.count(key)) fail(path(key), "is not a recognized key");
    }
  }

 private:
  const json& obj_;
  const std::string& text_;
  std::string scope_;
  std::set<std::string> seen_;
};

void read_model(Reader& r, SessionConfig& s) {
  if (!r.has("model")) return;
  Reader m(r.raw("model"), r.text(), r.path("model"));
  if (m.has("hidden_layers")) {
    s.hidden_layers = m.list<std::size_t>("hidden_layers");
    for (std::size_t w : s.hidden_layers) {
      if (w == 0) m.fail(m.path("hidden_layers"), "widths must be positive");
    }
  }
  m.maybe("embedding_dim", s.embedding_dim);
  if (s.embedding_dim == 0) m.fail(m.path("embedding_dim"), "must be positive");
  if (m.has("activation")) {
    try {
      s.activation = parse_activation(m.get<std::string>("activation"));
    } catch (const Error&) {
      m.fail(m.path("activation"), "must be \"relu\" or \"tanh\"");
    }
  }
  m.finish();
}

void read_train(Reader& r, SessionConfig& s) {
  if (!r.has("train")) return;
  Reader t(r.raw("train"), r.text(), r.path("train"));
  t.maybe("pretrain_epochs", s.pretrain.epochs);
  t.maybe("epochs", s.warm_start.epochs);
  if (t.has("sgd_batch")) s.pretrain.sgd_batch = s.warm_start.sgd_batch = t.get<std::size_t>("sgd_batch");
  if (s.warm_start.sgd_batch == 0) t.fail(t.path("sgd_batch"), "must be positive");
  if (t.has("learning_rate")) {
    const double lr = t.get<double>("learning_rate");
    if (!(lr > 0.0)) t.fail(t.path("learning_rate"), "must be positive");
    s.pretrain.learning_rate = s.warm_start.learning_rate = lr;
  }
  if (t.has("dropout_p")) {
    const double p = t.get<double>("dropout_p");
    if (!(p >= 0.0 && p < 1.0)) t.fail(t.path("dropout_p"), "must lie in [0, 1)");
    s.pretrain.dropout_p = s.warm_start.dropout_p = p;
  }
  t.finish();
}

// Keys shared by experiment configs and session requests.
void read_common(Reader& r, SessionConfig& s, RoundConfig& rc, std::size_t& triplet_count,
                 std::uint64_t& triplet_seed) {
  r.maybe("triplet_count", triplet_count);
  if (triplet_count == 0) r.fail("triplet_count", "must be positive");
  r.maybe("triplet_seed", triplet_seed);
  r.maybe("batch_size", rc.batch_size);
  if (rc.batch_size == 0) r.fail("batch_size", "must be at least 1");
  r.maybe("dropout_samples", rc.passes);
  if (rc.passes < 2) r.fail("dropout_samples", "must be at least 2");
  if (r.has("dropout_p")) {
    rc.dropout_p = r.get<double>("dropout_p");
    if (!(rc.dropout_p >= 0.0 && rc.dropout_p < 1.0)) r.fail("dropout_p", "must lie in [0, 1)");
  }
  if (r.has("jitter")) {
    const double j = r.get<double>("jitter");
    if (!(j >= 0.0)) r.fail("jitter", "must be non-negative");
    rc.jitter = j;
  }
  r.maybe("candidate_cap", rc.candidate_cap);
  r.maybe("init_pool", s.init_pool);
  if (r.has("noise")) {
    s.noise = r.get<double>("noise");
    if (!(s.noise >= 0.0 && s.noise <= 1.0)) r.fail("noise", "must lie in [0, 1]");
  }
  if (r.has("train_fraction")) {
    s.train_fraction = r.get<double>("train_fraction");
    if (!(s.train_fraction > 0.0 && s.train_fraction < 1.0)) r.fail("train_fraction", "must lie in (0, 1)");
  }
  read_model(r, s);
  read_train(r, s);
}

// Defaults of a fresh config: dropout p = 0.02 and lr 1e-4, with epoch
// counts cut down for desk runs.
void apply_defaults(SessionConfig& s, RoundConfig& rc) {
  s.pretrain.epochs = 200;
  s.warm_start.epochs = 200;
  s.pretrain.learning_rate = s.warm_start.learning_rate = 1e-4;
  s.pretrain.dropout_p = s.warm_start.dropout_p = 0.02;
  rc.dropout_p = 0.02;
  rc.passes = 70;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  if (path.is_relative() && !base.empty()) path = base / path;
  return path;
}

SyntheticSpec read_synthetic(const json& obj, const std::string& text, const std::string& scope) {
  Reader r(obj, text, scope);
  SyntheticSpec spec;
  r.maybe("n", spec.n);
  r.maybe("d", spec.d);
  r.maybe("latent_dim", spec.latent_dim);
  r.maybe("noise", spec.noise);
  r.maybe("seed", spec.seed);
  if (r.has("nonlinearity")) {
    try {
      spec.nonlinearity = parse_nonlinearity(r.get<std::string>("nonlinearity"));
    } catch (const Error&) {
      r.fail(r.path("nonlinearity"), "must be \"tanh\" or \"identity\"");
    }
  }
  r.finish();
  if (spec.n < 3) r.fail(r.path("n"), "must be at least 3");
  if (spec.d == 0) r.fail(r.path("d"), "must be positive");
  if (spec.latent_dim == 0 || spec.latent_dim > spec.d) r.fail(r.path("latent_dim"), "must lie in [1, d]");
  if (!(spec.noise >= 0.0)) r.fail(r.path("noise"), "must be non-negative");
  return spec;
}

}  // namespace

DatasetSource dataset_dir_source(const std::filesystem::path& dir) {
  DatasetSource src;
  src.name = dir.filename().string();
  src.features = dir / "features.csv";
  if (std::filesystem::exists(dir / "dissim.csv")) src.dissim = dir / "dissim.csv";
  if (std::filesystem::exists(dir / "triplets.jsonl")) src.triplets = dir / "triplets.jsonl";
  if (std::filesystem::exists(dir / "manifest.json")) src.manifest = dir / "manifest.json";
  return src;
}

ExperimentConfig parse_experiment_config(const std::string& text, const std::filesystem::path& base_dir) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    const std::size_t upto = std::min(e.byte, text.size());
    const auto line = 1 + std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(upto), '\n');
    throw Error(Errc::ConfigError, "line " + std::to_string(line) + ": invalid JSON: " + e.what());
  }

  ExperimentConfig cfg;
  apply_defaults(cfg.spec.session, cfg.spec.round);
  cfg.spec.seeds = {0};
  Reader r(doc, text, "");

  if (!r.has("dataset")) r.fail("dataset", "is required");
  {
    Reader d(r.raw("dataset"), text, "dataset");
    if (d.has("synthetic")) {
      cfg.dataset.synthetic = read_synthetic(d.raw("synthetic"), text, "dataset.synthetic");
      cfg.dataset.name = "synthetic";
    }
    if (d.has("dir")) {
      cfg.dataset = dataset_dir_source(resolve(base_dir, d.get<std::string>("dir")));
    }
    if (d.has("features")) cfg.dataset.features = resolve(base_dir, d.get<std::string>("features"));
    if (d.has("dissim")) cfg.dataset.dissim = resolve(base_dir, d.get<std::string>("dissim"));
    if (d.has("triplets")) cfg.dataset.triplets = resolve(base_dir, d.get<std::string>("triplets"));
    if (d.has("manifest")) cfg.dataset.manifest = resolve(base_dir, d.get<std::string>("manifest"));
    if (d.has("name")) cfg.dataset.name = d.get<std::string>("name");
    d.finish();
    if (!cfg.dataset.synthetic && cfg.dataset.features.empty()) {
      d.fail("dataset", "needs \"synthetic\", \"dir\" or \"features\"");
    }
    if (!cfg.dataset.synthetic && cfg.dataset.dissim.empty() && cfg.dataset.triplets.empty()) {
      d.fail("dataset", "needs ground truth (\"dissim\" or \"triplets\")");
    }
    if (cfg.dataset.name.empty()) cfg.dataset.name = cfg.dataset.features.parent_path().filename().string();
  }

  read_common(r, cfg.spec.session, cfg.spec.round, cfg.triplet_count, cfg.triplet_seed);

  if (r.has("strategies")) {
    for (const std::string& name : r.list<std::string>("strategies")) {
      Strategy s{};
      try {
        s = parse_strategy(name);
      } catch (const Error&) {
        r.fail("strategies", "contains unknown strategy \"" + name + "\"");
      }
      if (std::find(cfg.spec.strategies.begin(), cfg.spec.strategies.end(), s) != cfg.spec.strategies.end()) {
        cfg.warnings.push_back("strategy \"" + name + "\" listed more than once; running it once");
        continue;
      }
      cfg.spec.strategies.push_back(s);
    }
  }
  if (cfg.spec.strategies.empty()) r.fail("strategies", "must name at least one strategy");
  r.maybe("rounds", cfg.spec.rounds);
  if (r.has("seeds")) {
    cfg.spec.seeds = r.list<std::uint64_t>("seeds");
    if (cfg.spec.seeds.empty()) r.fail("seeds", "must list at least one seed");
  }
  if (r.has("output_dir")) cfg.output_dir = resolve(base_dir, r.get<std::string>("output_dir"));
  r.finish();
  return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_experiment_config(ss.str(), path.parent_path());
  } catch (const Error& e) {
    if (e.code() == Errc::ConfigError) throw Error(Errc::ConfigError, path.string() + ": " + e.what());
    throw;
  }
}

std::shared_ptr<const Dataset> load_dataset(const DatasetSource& source, std::size_t triplet_count,
                                            std::uint64_t seed) {
  if (source.synthetic) {
    SyntheticDataset syn = generate_synthetic(*source.synthetic);
    return std::make_shared<const Dataset>(make_dataset(source.name, std::move(syn.features),
                                                        std::move(syn.dissim), triplet_count, seed));
  }
  FeatureTable features = load_features(source.features);
  GroundTruth truth;
  if (!source.dissim.empty()) {
    truth = load_dissim(source.dissim);
  } else {
    truth = TripletList{load_triplets(source.triplets)};
  }
  Dataset ds = make_dataset(source.name, std::move(features), std::move(truth), triplet_count, seed);
  if (!source.manifest.empty()) {
    std::ifstream in(source.manifest);
    if (!in) throw Error(Errc::IoError, "cannot open manifest " + source.manifest.string());
    try {
      const json m = json::parse(in);
      if (m.contains("labels")) ds.labels = m.at("labels").get<std::vector<std::string>>();
      if (m.contains("images")) ds.image_urls = m.at("images").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
      throw Error(Errc::ParseError, source.manifest.string() + ": " + e.what());
    }
  }
  return std::make_shared<const Dataset>(std::move(ds));
}

SessionRequest parse_session_request(const json& body) {
  static const std::string no_text;
  SessionRequest req;
  apply_defaults(req.session, req.round);
  Reader r(body, no_text, "");
  if (!r.has("dataset")) r.fail("dataset", "is required");
  req.dataset = r.get<std::string>("dataset");
  if (r.has("strategy")) {
    try {
      req.round.strategy = parse_strategy(r.get<std::string>("strategy"));
    } catch (const Error&) {
      r.fail("strategy", "is not a known strategy");
    }
  }
  r.maybe("seed", req.session.seed);
  read_common(r, req.session, req.round, req.triplet_count, req.triplet_seed);
  r.finish();
  return req;
}

nlohmann::json to_json(const SessionRequest& req) {
  json j;
  j["dataset"] = req.dataset;
  j["strategy"] = std::string(strategy_name(req.round.strategy));
  j["seed"] = req.session.seed;
  j["triplet_count"] = req.triplet_count;
  j["triplet_seed"] = req.triplet_seed;
  j["batch_size"] = req.round.batch_size;
  j["dropout_samples"] = req.round.passes;
  j["dropout_p"] = req.round.dropout_p;
  j["jitter"] = req.round.jitter ? json(*req.round.jitter) : json(nullptr);
  j["candidate_cap"] = req.round.candidate_cap;
  j["init_pool"] = req.session.init_pool;
  j["noise"] = req.session.noise;
  j["train_fraction"] = req.session.train_fraction;
  j["model"] = {{"hidden_layers", req.session.hidden_layers},
                {"embedding_dim", req.session.embedding_dim},
                {"activation", std::string(activation_name(req.session.activation))}};
  j["train"] = {{"pretrain_epochs", req.session.pretrain.epochs},
                {"epochs", req.session.warm_start.epochs},
                {"sgd_batch", req.session.warm_start.sgd_batch},
                {"learning_rate", req.session.warm_start.learning_rate},
                {"dropout_p", req.session.warm_start.dropout_p}};
  return j;
}

}  // namespace batchal
