#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "batchal/config.hpp"
#include "batchal/loop.hpp"

namespace httplib {
class Server;
}

namespace batchal {

struct ServiceOptions {
  std::string host = "127.0.0.1";
  int port = 8787;  // 0 picks a free port
  std::filesystem::path data_dir;  // one subdirectory per dataset
  std::filesystem::path ui_dir;    // served under /ui when set
};

enum class SessionStatus { Idle, AwaitingAnnotations, Training };

std::string_view status_name(SessionStatus s) noexcept;

nlohmann::json to_json(const RoundRecord& record);
RoundRecord round_record_from_json(const nlohmann::json& j);

/// HTTP front end over ActiveLearningSession. Each session has one logical
/// writer: handlers serialize on the session mutex, and warm-start training
/// runs on a per-session worker thread while the session reports "training".
class AnnotationService {
 public:
  explicit AnnotationService(ServiceOptions options);
  ~AnnotationService();

  AnnotationService(const AnnotationService&) = delete;
  AnnotationService& operator=(const AnnotationService&) = delete;

  void register_dataset(const std::string& name, FeatureTable features, GroundTruth truth,
                        std::vector<std::string> labels = {}, std::vector<std::string> images = {});
  // Loads every subdirectory of options.data_dir that holds features.csv.
  std::size_t register_data_dir(const std::filesystem::path& dir);

  // Binds and serves on a background thread; returns the bound port.
  int start();
  // Binds and serves on the calling thread until stop().
  void run();
  void stop();
  // Blocks until no session is training.
  void wait_idle();

  int port() const noexcept { return port_; }

 private:
  struct RawDataset;
  struct Entry;

  void install_routes();
  std::shared_ptr<Entry> find(const std::string& id);
  std::shared_ptr<const Dataset> dataset_for(const SessionRequest& req);

  ServiceOptions options_;
  std::unique_ptr<httplib::Server> server_;
  std::thread listener_;
  int port_ = 0;

  std::mutex registry_mu_;
  std::map<std::string, std::shared_ptr<RawDataset>> datasets_;
  std::map<std::string, std::shared_ptr<Entry>> sessions_;
  std::size_t next_id_ = 1;
};

}  // namespace batchal
