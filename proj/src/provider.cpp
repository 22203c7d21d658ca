#include "unipose/provider.hpp"

#include <spawn.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include <json.hpp>

#include "unipose/error.hpp"
#include "unipose/io.hpp"

extern char** environ;

namespace unipose {

namespace fs = std::filesystem;

FilesProvider::FilesProvider(fs::path scene_dir, std::vector<std::string> tags)
    : dir_(std::move(scene_dir)), tags_(std::move(tags)) {}

std::vector<FeatureMap> FilesProvider::features2d(const ImageFeatureRequest& req) {
  std::string stem = req.role == FeatureRole::kTarget
                         ? std::string("target")
                         : "ref_v" + std::to_string(req.view) + "_i" + std::to_string(req.iteration);
  std::vector<FeatureMap> maps;
  for (const auto& tag : tags_) {
    const fs::path p = dir_ / "features" / (stem + "." + tag + ".uftn");
    if (!fs::exists(p)) fail(ErrorKind::kProvider, "files provider: missing " + p.string());
    FeatureMap fm = read_feature_map(p);
    if (fm.source_tag.empty()) fm.source_tag = tag;
    maps.push_back(std::move(fm));
  }
  return maps;
}

Tensor FilesProvider::features3d(const CloudFeatureRequest& req) {
  const fs::path p = dir_ / "features" / (req.role == FeatureRole::kTarget ? "cloud_target.uftn" : "cloud_reference.uftn");
  if (!fs::exists(p)) fail(ErrorKind::kProvider, "files provider: missing " + p.string());
  Tensor t = read_tensor(p);
  if (t.ndims() != 2 || t.dim(0) != req.cloud->size()) {
    fail(ErrorKind::kProvider, "files provider: " + p.string() + " does not match the requested cloud size");
  }
  return t;
}

SubprocessProvider::SubprocessProvider(const std::string& command, fs::path work_dir, std::vector<std::string> tags,
                                       fs::path target_image)
    : work_dir_(std::move(work_dir)), tags_(std::move(tags)), target_image_(std::move(target_image)) {
  fs::create_directories(work_dir_);
  int sv[2];
  if (socketpair(AF_UNIX, SOCK_STREAM, 0, sv) != 0) {
    fail(ErrorKind::kProvider, std::string("socketpair failed: ") + std::strerror(errno));
  }
  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_adddup2(&actions, sv[1], STDIN_FILENO);
  posix_spawn_file_actions_adddup2(&actions, sv[1], STDOUT_FILENO);
  posix_spawn_file_actions_addclose(&actions, sv[0]);
  posix_spawn_file_actions_addclose(&actions, sv[1]);
  std::string cmd = command;
  char sh[] = "/bin/sh";
  char dash_c[] = "-c";
  char* argv[] = {sh, dash_c, cmd.data(), nullptr};
  pid_t pid = -1;
  const int rc = posix_spawn(&pid, "/bin/sh", &actions, nullptr, argv, environ);
  posix_spawn_file_actions_destroy(&actions);
  ::close(sv[1]);
  if (rc != 0) {
    ::close(sv[0]);
    fail(ErrorKind::kProvider, "cannot start provider: " + std::string(std::strerror(rc)));
  }
  child_pid_ = pid;
  from_child_ = fdopen(sv[0], "r");
  if (!from_child_) {
    ::close(sv[0]);
    fail(ErrorKind::kProvider, "fdopen failed");
  }
}

SubprocessProvider::~SubprocessProvider() {
  if (from_child_) {
    ::shutdown(fileno(from_child_), SHUT_WR);
    std::fclose(from_child_);
  }
  if (child_pid_ > 0) {
    int status = 0;
    ::waitpid(child_pid_, &status, 0);
  }
}

void SubprocessProvider::call(const std::string& request_json, std::size_t id) {
  const std::string line = request_json + "\n";
  const int fd = fileno(from_child_);
  std::size_t sent = 0;
  while (sent < line.size()) {
    const ssize_t n = ::send(fd, line.data() + sent, line.size() - sent, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      fail(ErrorKind::kProvider, "provider connection closed while sending request " + std::to_string(id));
    }
    sent += static_cast<std::size_t>(n);
  }
  char* buf = nullptr;
  std::size_t cap = 0;
  const ssize_t got = ::getline(&buf, &cap, from_child_);
  std::string reply = got > 0 ? std::string(buf, static_cast<std::size_t>(got)) : std::string();
  std::free(buf);
  if (got <= 0) fail(ErrorKind::kProvider, "provider exited without answering request " + std::to_string(id));
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(reply);
  } catch (const nlohmann::json::exception&) {
    fail(ErrorKind::kProvider, "provider sent malformed JSON: " + reply);
  }
  if (j.value("id", std::size_t(-1)) != id) fail(ErrorKind::kProvider, "provider answered out of order: " + reply);
  if (!j.value("ok", false)) fail(ErrorKind::kProvider, "provider error: " + j.value("error", std::string("unknown")));
}

std::vector<FeatureMap> SubprocessProvider::features2d(const ImageFeatureRequest& req) {
  fs::path image = target_image_;
  if (req.role == FeatureRole::kReference) {
    require(req.render != nullptr && req.render->shaded.has_value(), "reference request needs a shaded render");
    image = work_dir_ / ("ref_v" + std::to_string(req.view) + "_i" + std::to_string(req.iteration) + ".png");
    write_png8(*req.render->shaded, image);
  }
  std::vector<FeatureMap> maps;
  for (const auto& tag : tags_) {
    const std::size_t id = next_id_++;
    const fs::path out = work_dir_ / ("feat_" + std::to_string(id) + "." + tag + ".uftn");
    nlohmann::json j = {{"id", id}, {"op", "features2d"}, {"image", image.string()}, {"out", out.string()}, {"model", tag}};
    call(j.dump(), id);
    FeatureMap fm;
    try {
      fm = read_feature_map(out);
    } catch (const Error& e) {
      fail(ErrorKind::kProvider, std::string("provider output unreadable: ") + e.what());
    }
    if (fm.source_tag.empty()) fm.source_tag = tag;
    maps.push_back(std::move(fm));
  }
  return maps;
}

Tensor SubprocessProvider::features3d(const CloudFeatureRequest& req) {
  require(req.cloud != nullptr, "features3d: null cloud");
  const std::size_t id = next_id_++;
  const fs::path cloud = work_dir_ / ("cloud_" + std::to_string(id) + ".uftn");
  const fs::path out = work_dir_ / ("cloudfeat_" + std::to_string(id) + ".uftn");
  std::vector<float> xyz;
  xyz.reserve(req.cloud->size() * 3);
  for (const auto& p : req.cloud->points)
    for (int c = 0; c < 3; ++c) xyz.push_back(static_cast<float>(p[c]));
  write_tensor(Tensor({static_cast<std::uint32_t>(req.cloud->size()), 3u}, std::move(xyz)), cloud);
  nlohmann::json j = {{"id", id}, {"op", "features3d"}, {"cloud", cloud.string()}, {"out", out.string()}};
  call(j.dump(), id);
  Tensor t;
  try {
    t = read_tensor(out);
  } catch (const Error& e) {
    fail(ErrorKind::kProvider, std::string("provider output unreadable: ") + e.what());
  }
  if (t.ndims() != 2 || t.dim(0) != req.cloud->size()) fail(ErrorKind::kProvider, "provider returned wrong 3D feature shape");
  return t;
}

}  // namespace unipose
