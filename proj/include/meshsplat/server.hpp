#pragma once

// HTTP bridge for the web viewer:
//   GET  /manifest        manifest.json of the bundle
//   GET  /assets/<file>   any file inside the bundle directory
//   POST /pose            pose JSON in, binary polygon frames out
//
// Handlers share only immutable state, so requests are served
// concurrently.

#include "meshsplat/types.hpp"

#include <filesystem>
#include <memory>
#include <string>

namespace meshsplat {

struct HttpResponse {
  int status = 200;
  std::string content_type;
  std::string body;
};

class BundleServer {
 public:
  explicit BundleServer(std::filesystem::path bundle_dir);
  ~BundleServer();
  BundleServer(const BundleServer&) = delete;
  BundleServer& operator=(const BundleServer&) = delete;

  // Request handlers, usable without a socket.
  HttpResponse manifest() const;
  HttpResponse asset(const std::string& relative_path) const;
  HttpResponse pose(const std::string& body) const;

  /// Binds to host:port (port 0 picks a free one) and returns the port.
  int bind(const std::string& host, int port);
  /// Serves until stop() is called. Requires a prior bind().
  void serve();
  void stop();

  const SkinnedMesh& mesh() const { return mesh_; }

 private:
  struct Impl;
  std::filesystem::path dir_;
  std::string manifest_text_;
  SkinnedMesh mesh_;
  std::unique_ptr<Impl> impl_;
};

}  // namespace meshsplat
