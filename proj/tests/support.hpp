#pragma once

#include <filesystem>
#include <memory>
#include <random>
#include <string>

#include <nlohmann/json.hpp>

#include "passflow/network.hpp"
#include "passflow/simulation.hpp"

namespace passflow::testing {

inline std::filesystem::path data_path(const std::string& name) {
  return std::filesystem::path(PASSFLOW_TEST_DATA) / name;
}

inline nlohmann::json fixture(const std::string& name) { return load_json_file(data_path(name + ".json")); }

inline std::shared_ptr<const NetworkModel> model_of(const nlohmann::json& doc) {
  return std::make_shared<const NetworkModel>(NetworkModel::from_document(doc));
}

inline std::shared_ptr<const NetworkModel> fixture_model(const std::string& name) { return model_of(fixture(name)); }

// Unique scratch directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("passflow-test-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace passflow::testing
