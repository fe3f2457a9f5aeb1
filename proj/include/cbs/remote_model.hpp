#pragma once

#include <chrono>
#include <functional>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <variant>

#include <json.hpp>

#include "cbs/models.hpp"

namespace cbs {

// Adapter for externally hosted models. The wire format is newline-delimited
// JSON, one request per line, answered by one response line echoing "id":
//
//   {"id":1,"op":"mask_logprobs","tokens":[...],"mask_positions":[...]} -> {"id":1,"logprobs":[[...]]}
//   {"id":2,"op":"ppl","text":"..."}                                     -> {"id":2,"ppl":12.5}
//   {"id":3,"op":"classify","text":"..."}                                -> {"id":3,"probs":[...]}
//   {"id":4,"op":"classify","premise":"...","hypothesis":"..."}          -> {"id":4,"probs":[...]}
//   {"id":5,"op":"ner","text":"..."}                                     -> {"id":5,"entities":[...]}
//
// Failures are reported as {"id":...,"error":"message"}. A null entry in a
// log-probability row stands for -inf.

/// The connection failed; retrying may succeed.
class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The peer answered with something that violates the protocol or the
/// model contract.
class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The peer reported a failure for a well-formed request.
class RemoteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A bidirectional line channel to a model server.
class LineChannel {
 public:
  virtual ~LineChannel() = default;
  virtual void send_line(const std::string& line) = 0;
  virtual std::string read_line() = 0;
};

/// "tcp://host:port" or "exec:<shell command>".
struct Endpoint {
  enum class Kind { kTcp, kExec } kind = Kind::kTcp;
  std::string host;
  int port = 0;
  std::string command;

  static Endpoint parse(std::string_view spec);
  static bool looks_like_endpoint(std::string_view spec);
  std::string to_string() const;
};

std::unique_ptr<LineChannel> open_channel(const Endpoint& endpoint, std::chrono::milliseconds timeout);

struct RemoteOptions {
  int retries = 3;
  std::chrono::milliseconds timeout{30000};
  std::chrono::milliseconds backoff{50};
  /// Relative mass error tolerated (and renormalized) in returned
  /// distributions; anything larger is a protocol error.
  double tolerance = 1e-4;
};

/// One logical connection. Requests are serialized; a failed transport is
/// reopened up to `retries` times before TransportError escapes.
class RemoteSession {
 public:
  RemoteSession(Endpoint endpoint, RemoteOptions options = {});
  nlohmann::json call(nlohmann::json request);
  const RemoteOptions& options() const { return options_; }

 private:
  Endpoint endpoint_;
  RemoteOptions options_;
  std::mutex mutex_;
  std::unique_ptr<LineChannel> channel_;
  std::int64_t next_id_ = 1;
};

/// Validates a log-probability row: renormalizes within tolerance, throws
/// ProtocolError beyond it. Null entries become -inf.
Vector validate_log_row(const nlohmann::json& row, std::size_t expected_size, double tolerance);
/// Same for a probability vector.
Vector validate_probabilities(const nlohmann::json& probs, std::size_t expected_size, double tolerance);

class RemoteMaskedLm final : public MaskedLanguageModel {
 public:
  RemoteMaskedLm(std::shared_ptr<RemoteSession> session, std::size_t vocab_size);
  std::size_t vocab_size() const override { return vocab_size_; }
  std::vector<Vector> mask_logprobs(std::span<const TokenId> tokens,
                                    std::span<const std::size_t> mask_positions) const override;

 private:
  std::shared_ptr<RemoteSession> session_;
  std::size_t vocab_size_;
};

class RemoteScorer final : public CausalScorer {
 public:
  explicit RemoteScorer(std::shared_ptr<RemoteSession> session);
  double perplexity(std::string_view text) const override;

 private:
  std::shared_ptr<RemoteSession> session_;
};

class RemoteClassifier final : public Classifier {
 public:
  RemoteClassifier(std::shared_ptr<RemoteSession> session, std::size_t num_classes);
  std::size_t num_classes() const override { return classes_; }
  Vector predict(const ClassifierInput& input) const override;

 private:
  std::shared_ptr<RemoteSession> session_;
  std::size_t classes_;
};

class RemoteEntityRecognizer final : public EntityRecognizer {
 public:
  explicit RemoteEntityRecognizer(std::shared_ptr<RemoteSession> session);
  std::vector<std::string> recognize(std::string_view text) const override;

 private:
  std::shared_ptr<RemoteSession> session_;
};

enum class ModelRole { kMlm, kScorer, kClassifier, kNer };

using ExternalModel = std::variant<std::shared_ptr<MaskedLanguageModel>, std::shared_ptr<CausalScorer>,
                                   std::shared_ptr<Classifier>, std::shared_ptr<EntityRecognizer>>;

/// `output_size` is the vocabulary size for kMlm and the class count for
/// kClassifier; ignored otherwise.
ExternalModel connect_external_model(std::string_view endpoint, ModelRole role, std::size_t output_size = 0,
                                     const RemoteOptions& options = {});

/// Serving side of the protocol: answers one request line using whichever
/// local models are bound. Used by test servers and local bridges.
struct ModelBindings {
  const MaskedLanguageModel* mlm = nullptr;
  const CausalScorer* scorer = nullptr;
  const Classifier* classifier = nullptr;
  const EntityRecognizer* ner = nullptr;
};
std::string handle_request_line(const std::string& line, const ModelBindings& models);

/// Minimal blocking TCP server speaking the protocol on 127.0.0.1. Each
/// connection is served on its own thread until the peer closes it.
class ProtocolServer {
 public:
  using Handler = std::function<std::string(const std::string&)>;
  /// port 0 picks a free port.
  explicit ProtocolServer(Handler handler, int port = 0);
  ~ProtocolServer();
  ProtocolServer(const ProtocolServer&) = delete;
  ProtocolServer& operator=(const ProtocolServer&) = delete;

  int port() const { return port_; }
  std::string endpoint() const { return "tcp://127.0.0.1:" + std::to_string(port_); }
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  int port_ = 0;
};

}  // namespace cbs
