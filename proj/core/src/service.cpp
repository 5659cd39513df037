#include "batchal/service.hpp"

#include <algorithm>
#include <condition_variable>
#include <fstream>
#include <optional>
#include <set>

#include <httplib.h>

#include "batchal/error.hpp"

namespace batchal {

namespace {

using nlohmann::json;

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& code, const std::string& msg) {
  send_json(res, status, json{{"error", msg}, {"code", code}});
}

}  // namespace

std::string_view status_name(SessionStatus s) noexcept {
  switch (s) {
    case SessionStatus::Idle: return "idle";
    case SessionStatus::AwaitingAnnotations: return "awaiting_annotations";
    case SessionStatus::Training: return "training";
  }
  return "unknown";
}

json to_json(const RoundRecord& r) {
  return json{{"round", r.round},
              {"strategy", r.strategy},
              {"chosen", r.chosen},
              {"batch_entropy", r.batch_entropy},
              {"accuracy", r.accuracy},
              {"select_ms", r.select_ms},
              {"train_ms", r.train_ms}};
}

RoundRecord round_record_from_json(const json& j) {
  RoundRecord r;
  r.round = j.at("round").get<std::size_t>();
  r.strategy = j.at("strategy").get<std::string>();
  r.chosen = j.at("chosen").get<std::vector<TripletId>>();
  r.batch_entropy = j.at("batch_entropy").get<double>();
  r.accuracy = j.at("accuracy").get<double>();
  r.select_ms = j.at("select_ms").get<double>();
  r.train_ms = j.at("train_ms").get<double>();
  return r;
}

struct AnnotationService::RawDataset {
  FeatureTable features;
  GroundTruth truth;
  std::vector<std::string> labels;
  std::vector<std::string> images;
  // Triplet universes keyed by (count, seed).
  std::mutex mu;
  std::map<std::pair<std::size_t, std::uint64_t>, std::shared_ptr<const Dataset>> built;
};

struct AnnotationService::Entry {
  std::mutex mu;
  std::condition_variable idle_cv;
  std::string id;
  SessionRequest request;
  std::optional<ActiveLearningSession> session;
  SessionStatus status = SessionStatus::Idle;
  std::optional<Proposal> batch;
  std::map<TripletId, Triplet> answers;
  // Snapshot readable while the worker owns `session`.
  std::vector<RoundRecord> history;
  std::size_t round = 0;
  std::size_t labeled = 0;
  std::size_t unlabeled = 0;
  std::string last_error;
  std::thread worker;

  json descriptor() const {
    json d{{"id", id},
           {"config", to_json(request)},
           {"round", round},
           {"labeled", labeled},
           {"unlabeled", unlabeled},
           {"status", std::string(status_name(status))}};
    if (!last_error.empty()) d["last_error"] = last_error;
    return d;
  }

  void refresh_snapshot() {
    history = session->history();
    round = session->round();
    labeled = session->labeled().size();
    unlabeled = session->unlabeled_ids().size();
  }
};

AnnotationService::AnnotationService(ServiceOptions options)
    : options_(std::move(options)), server_(std::make_unique<httplib::Server>()) {
  if (!options_.data_dir.empty()) register_data_dir(options_.data_dir);
  install_routes();
}

AnnotationService::~AnnotationService() {
  stop();
  std::lock_guard lock(registry_mu_);
  for (auto& [id, entry] : sessions_) {
    if (entry->worker.joinable()) entry->worker.join();
  }
}

void AnnotationService::register_dataset(const std::string& name, FeatureTable features,
                                         GroundTruth truth, std::vector<std::string> labels,
                                         std::vector<std::string> images) {
  auto raw = std::make_shared<RawDataset>();
  raw->features = std::move(features);
  raw->truth = std::move(truth);
  raw->labels = std::move(labels);
  raw->images = std::move(images);
  std::lock_guard lock(registry_mu_);
  datasets_[name] = std::move(raw);
}

std::size_t AnnotationService::register_data_dir(const std::filesystem::path& dir) {
  std::size_t count = 0;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_directory() || !std::filesystem::exists(entry.path() / "features.csv")) continue;
    const DatasetSource src = dataset_dir_source(entry.path());
    if (src.dissim.empty() && src.triplets.empty()) continue;
    FeatureTable features = load_features(src.features);
    GroundTruth truth;
    if (!src.dissim.empty()) {
      truth = load_dissim(src.dissim);
    } else {
      truth = TripletList{load_triplets(src.triplets)};
    }
    std::vector<std::string> labels, images;
    if (!src.manifest.empty()) {
      std::ifstream in(src.manifest);
      const json m = json::parse(in);
      if (m.contains("labels")) labels = m.at("labels").get<std::vector<std::string>>();
      if (m.contains("images")) images = m.at("images").get<std::vector<std::string>>();
    }
    register_dataset(src.name, std::move(features), std::move(truth), std::move(labels), std::move(images));
    ++count;
  }
  return count;
}

std::shared_ptr<const Dataset> AnnotationService::dataset_for(const SessionRequest& req) {
  std::shared_ptr<RawDataset> raw;
  {
    std::lock_guard lock(registry_mu_);
    auto it = datasets_.find(req.dataset);
    if (it == datasets_.end()) return nullptr;
    raw = it->second;
  }
  std::lock_guard lock(raw->mu);
  auto& slot = raw->built[{req.triplet_count, req.triplet_seed}];
  if (!slot) {
    Dataset ds = make_dataset(req.dataset, raw->features, raw->truth, req.triplet_count, req.triplet_seed);
    ds.labels = raw->labels;
    ds.image_urls = raw->images;
    slot = std::make_shared<const Dataset>(std::move(ds));
  }
  return slot;
}

std::shared_ptr<AnnotationService::Entry> AnnotationService::find(const std::string& id) {
  std::lock_guard lock(registry_mu_);
  auto it = sessions_.find(id);
  return it == sessions_.end() ? nullptr : it->second;
}

void AnnotationService::install_routes() {
  httplib::Server& srv = *server_;
  srv.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                           {"Access-Control-Allow-Headers", "Content-Type"},
                           {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
  srv.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  if (!options_.ui_dir.empty()) srv.set_mount_point("/ui", options_.ui_dir.string());

  srv.Get("/health", [](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, json{{"status", "ok"}});
  });

  srv.Get("/datasets", [this](const httplib::Request&, httplib::Response& res) {
    json names = json::array();
    std::lock_guard lock(registry_mu_);
    for (const auto& [name, raw] : datasets_) names.push_back(name);
    send_json(res, 200, json{{"datasets", names}});
  });

  srv.Post("/sessions", [this](const httplib::Request& req, httplib::Response& res) {
    SessionRequest request;
    try {
      request = parse_session_request(json::parse(req.body));
    } catch (const json::exception& e) {
      return send_error(res, 400, "invalid_json", e.what());
    } catch (const Error& e) {
      return send_error(res, 400, "invalid_config", e.what());
    }
    std::shared_ptr<const Dataset> dataset;
    try {
      dataset = dataset_for(request);
    } catch (const Error& e) {
      return send_error(res, 400, std::string(errc_name(e.code())), e.what());
    }
    if (!dataset) return send_error(res, 404, "unknown_dataset", "unknown dataset '" + request.dataset + "'");

    auto entry = std::make_shared<Entry>();
    entry->request = request;
    try {
      entry->session = ActiveLearningSession::init(dataset, request.session);
    } catch (const Error& e) {
      return send_error(res, 400, std::string(errc_name(e.code())), e.what());
    }
    const std::size_t available = std::min(entry->session->unlabeled_ids().size(),
                                           request.round.candidate_cap == 0
                                               ? entry->session->unlabeled_ids().size()
                                               : request.round.candidate_cap);
    if (request.round.batch_size > available) {
      return send_error(res, 400, "batch_too_large",
                        "batch too large: b=" + std::to_string(request.round.batch_size) +
                            " exceeds " + std::to_string(available) + " candidates");
    }
    entry->refresh_snapshot();
    {
      std::lock_guard lock(registry_mu_);
      entry->id = "s" + std::to_string(next_id_++);
      sessions_[entry->id] = entry;
    }
    std::lock_guard lock(entry->mu);
    send_json(res, 201, entry->descriptor());
  });

  srv.Get(R"(/sessions/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    auto entry = find(req.matches[1]);
    if (!entry) return send_error(res, 404, "unknown_session", "no such session");
    std::lock_guard lock(entry->mu);
    send_json(res, 200, entry->descriptor());
  });

  srv.Get(R"(/sessions/([^/]+)/batch)", [this](const httplib::Request& req, httplib::Response& res) {
    auto entry = find(req.matches[1]);
    if (!entry) return send_error(res, 404, "unknown_session", "no such session");
    std::lock_guard lock(entry->mu);
    if (entry->status == SessionStatus::Training) {
      return send_error(res, 409, "training", "session is training; poll the session until idle");
    }
    if (entry->status == SessionStatus::Idle) {
      try {
        entry->batch = entry->session->propose(entry->request.round);
      } catch (const Error& e) {
        const int code = e.code() == Errc::BatchTooLarge ? 409 : 500;
        return send_error(res, code, std::string(errc_name(e.code())), e.what());
      }
      entry->answers.clear();
      entry->status = SessionStatus::AwaitingAnnotations;
    }
    const ActiveLearningSession& s = *entry->session;
    const Dataset& ds = s.dataset();
    auto payload = [&](ObjectId o) {
      json p{{"id", o}};
      const auto row = ds.features.rows.row(static_cast<Eigen::Index>(o));
      p["features"] = std::vector<double>(row.begin(), row.end());
      if (o < ds.labels.size()) p["label"] = ds.labels[o];
      if (o < ds.image_urls.size()) p["image"] = ds.image_urls[o];
      return p;
    };
    json items = json::array();
    for (TripletId id : entry->batch->chosen) {
      const Triplet& t = s.pool()[id];
      items.push_back(json{{"triplet_id", id},
                           {"i", t.i},
                           {"j", t.j},
                           {"k", t.k},
                           {"display", {{"i", payload(t.i)}, {"j", payload(t.j)}, {"k", payload(t.k)}}}});
    }
    send_json(res, 200, json{{"round", entry->batch->round},
                             {"strategy", std::string(strategy_name(entry->batch->strategy))},
                             {"batch_entropy", entry->batch->batch_entropy},
                             {"items", items}});
  });

  srv.Post(R"(/sessions/([^/]+)/annotations)", [this](const httplib::Request& req, httplib::Response& res) {
    auto entry = find(req.matches[1]);
    if (!entry) return send_error(res, 404, "unknown_session", "no such session");
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::exception& e) {
      return send_error(res, 400, "invalid_json", e.what());
    }
    std::lock_guard lock(entry->mu);
    if (entry->status != SessionStatus::AwaitingAnnotations) {
      return send_error(res, 409, "wrong_status",
                        "session is " + std::string(status_name(entry->status)) + ", not awaiting annotations");
    }
    const Proposal& batch = *entry->batch;
    if (!body.is_object() || !body.contains("answers") || !body["answers"].is_array()) {
      return send_error(res, 422, "invalid_submission", "body needs an \"answers\" array");
    }
    if (!body.contains("round") || !body["round"].is_number_unsigned() ||
        body["round"].get<std::size_t>() != batch.round) {
      return send_error(res, 422, "wrong_round", "submission is not for round " + std::to_string(batch.round));
    }
    // Validate everything before applying anything.
    std::vector<std::pair<TripletId, Triplet>> staged;
    std::set<TripletId> in_body;
    const ActiveLearningSession& s = *entry->session;
    for (const json& a : body["answers"]) {
      if (!a.is_object() || !a.contains("triplet_id") || !a["triplet_id"].is_number_unsigned() ||
          !a.contains("closer") || !a["closer"].is_string()) {
        return send_error(res, 422, "invalid_answer", "answers need triplet_id and closer");
      }
      const auto id = a["triplet_id"].get<TripletId>();
      const std::string closer = a["closer"].get<std::string>();
      if (std::find(batch.chosen.begin(), batch.chosen.end(), id) == batch.chosen.end()) {
        return send_error(res, 422, "unknown_triplet", "triplet " + std::to_string(id) + " is not in the served batch");
      }
      if (closer != "j" && closer != "k") {
        return send_error(res, 422, "invalid_answer", "closer must be \"j\" or \"k\"");
      }
      if (!in_body.insert(id).second) {
        return send_error(res, 422, "duplicate_answer", "triplet " + std::to_string(id) + " answered twice");
      }
      const Triplet& t = s.pool()[id];
      staged.emplace_back(id, closer == "j" ? t : t.swapped());
    }
    for (auto& [id, t] : staged) entry->answers[id] = t;
    const std::size_t remaining = batch.chosen.size() - entry->answers.size();
    send_json(res, 200, json{{"accepted", staged.size()}, {"remaining", remaining}});
    if (remaining > 0) return;

    std::vector<Triplet> ordered;
    for (TripletId id : batch.chosen) ordered.push_back(entry->answers.at(id));
    entry->status = SessionStatus::Training;
    if (entry->worker.joinable()) entry->worker.join();
    entry->worker = std::thread([entry, proposal = batch, ordered = std::move(ordered)] {
      // Only this thread touches entry->session while status is Training.
      std::string error;
      try {
        entry->session->commit(proposal, ordered);
      } catch (const std::exception& e) {
        error = e.what();
      }
      std::lock_guard worker_lock(entry->mu);
      entry->last_error = error;
      entry->refresh_snapshot();
      entry->batch.reset();
      entry->answers.clear();
      entry->status = SessionStatus::Idle;
      entry->idle_cv.notify_all();
    });
  });

  srv.Get(R"(/sessions/([^/]+)/metrics)", [this](const httplib::Request& req, httplib::Response& res) {
    auto entry = find(req.matches[1]);
    if (!entry) return send_error(res, 404, "unknown_session", "no such session");
    std::lock_guard lock(entry->mu);
    json records = json::array();
    for (const RoundRecord& r : entry->history) records.push_back(to_json(r));
    send_json(res, 200, json{{"status", std::string(status_name(entry->status))},
                             {"round", entry->round},
                             {"records", records}});
  });
}

int AnnotationService::start() {
  if (options_.port == 0) {
    port_ = server_->bind_to_any_port(options_.host);
  } else {
    port_ = server_->bind_to_port(options_.host, options_.port) ? options_.port : -1;
  }
  if (port_ < 0) throw Error(Errc::IoError, "cannot bind " + options_.host + ":" + std::to_string(options_.port));
  listener_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port_;
}

void AnnotationService::run() {
  port_ = options_.port;
  if (!server_->listen(options_.host, options_.port)) {
    throw Error(Errc::IoError, "cannot listen on " + options_.host + ":" + std::to_string(options_.port));
  }
}

void AnnotationService::stop() {
  if (server_) server_->stop();
  if (listener_.joinable()) listener_.join();
}

void AnnotationService::wait_idle() {
  std::vector<std::shared_ptr<Entry>> entries;
  {
    std::lock_guard lock(registry_mu_);
    for (auto& [id, e] : sessions_) entries.push_back(e);
  }
  for (auto& e : entries) {
    std::unique_lock lock(e->mu);
    e->idle_cv.wait(lock, [&] { return e->status != SessionStatus::Training; });
  }
}

}  // namespace batchal
