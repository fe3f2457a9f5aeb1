#include "cbs/remote_model.hpp"

#include <netdb.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <limits>
#include <thread>

namespace cbs {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::string errno_text() { return std::strerror(errno); }

void set_timeouts(int fd, std::chrono::milliseconds timeout) {
  timeval tv{};
  tv.tv_sec = static_cast<time_t>(timeout.count() / 1000);
  tv.tv_usec = static_cast<suseconds_t>((timeout.count() % 1000) * 1000);
  ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
  ::setsockopt(fd, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof tv);
}

/// Line I/O over a connected stream socket.
class SocketChannel : public LineChannel {
 public:
  explicit SocketChannel(int fd) : fd_(fd) {}
  ~SocketChannel() override {
    if (fd_ >= 0) ::close(fd_);
  }

  void send_line(const std::string& line) override {
    std::string payload = line;
    payload.push_back('\n');
    std::size_t sent = 0;
    while (sent < payload.size()) {
      const ssize_t n = ::send(fd_, payload.data() + sent, payload.size() - sent, MSG_NOSIGNAL);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw TransportError("send failed: " + errno_text());
      }
      sent += static_cast<std::size_t>(n);
    }
  }

  std::string read_line() override {
    for (;;) {
      const auto nl = buffer_.find('\n');
      if (nl != std::string::npos) {
        std::string line = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        return line;
      }
      char chunk[4096];
      const ssize_t n = ::recv(fd_, chunk, sizeof chunk, 0);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw TransportError("receive failed: " + errno_text());
      }
      if (n == 0) throw TransportError("connection closed by peer");
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

 protected:
  int fd_;
  std::string buffer_;
};

/// Child process whose stdin/stdout are one end of a socket pair.
class ProcessChannel : public SocketChannel {
 public:
  ProcessChannel(int fd, pid_t pid) : SocketChannel(fd), pid_(pid) {}
  ~ProcessChannel() override {
    ::shutdown(fd_, SHUT_RDWR);
    int status = 0;
    ::waitpid(pid_, &status, 0);
  }

 private:
  pid_t pid_;
};

std::unique_ptr<LineChannel> open_tcp(const Endpoint& ep, std::chrono::milliseconds timeout) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* result = nullptr;
  const std::string port = std::to_string(ep.port);
  if (int rc = ::getaddrinfo(ep.host.c_str(), port.c_str(), &hints, &result); rc != 0) {
    throw TransportError("cannot resolve " + ep.host + ": " + ::gai_strerror(rc));
  }
  std::string last_error = "no addresses";
  for (addrinfo* ai = result; ai != nullptr; ai = ai->ai_next) {
    const int fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
    if (fd < 0) continue;
    set_timeouts(fd, timeout);
    if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) {
      ::freeaddrinfo(result);
      return std::make_unique<SocketChannel>(fd);
    }
    last_error = errno_text();
    ::close(fd);
  }
  ::freeaddrinfo(result);
  throw TransportError("cannot connect to " + ep.to_string() + ": " + last_error);
}

std::unique_ptr<LineChannel> open_exec(const Endpoint& ep, std::chrono::milliseconds timeout) {
  int fds[2];
  if (::socketpair(AF_UNIX, SOCK_STREAM, 0, fds) != 0) {
    throw TransportError("socketpair failed: " + errno_text());
  }
  const pid_t pid = ::fork();
  if (pid < 0) {
    ::close(fds[0]);
    ::close(fds[1]);
    throw TransportError("fork failed: " + errno_text());
  }
  if (pid == 0) {
    ::close(fds[0]);
    ::dup2(fds[1], STDIN_FILENO);
    ::dup2(fds[1], STDOUT_FILENO);
    ::close(fds[1]);
    ::execl("/bin/sh", "sh", "-c", ep.command.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::close(fds[1]);
  set_timeouts(fds[0], timeout);
  return std::make_unique<ProcessChannel>(fds[0], pid);
}

double parse_log_entry(const nlohmann::json& v) {
  if (v.is_null()) return kNegInf;
  if (!v.is_number()) throw ProtocolError("log-probability entry is not a number");
  const double x = v.get<double>();
  if (std::isnan(x) || x == std::numeric_limits<double>::infinity()) {
    throw ProtocolError("log-probability entry is NaN or +inf");
  }
  return x;
}

nlohmann::json log_row_to_json(const Vector& row) {
  nlohmann::json out = nlohmann::json::array();
  for (double v : row) {
    if (std::isfinite(v)) {
      out.push_back(v);
    } else {
      out.push_back(nullptr);
    }
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Endpoint

Endpoint Endpoint::parse(std::string_view spec) {
  Endpoint ep;
  if (spec.rfind("exec:", 0) == 0) {
    ep.kind = Kind::kExec;
    ep.command = std::string(spec.substr(5));
    if (ep.command.empty()) throw std::invalid_argument("exec endpoint needs a command");
    return ep;
  }
  if (spec.rfind("tcp://", 0) != 0) {
    throw std::invalid_argument("endpoint must be tcp://host:port or exec:command, got '" +
                                std::string(spec) + "'");
  }
  const std::string_view rest = spec.substr(6);
  const auto colon = rest.rfind(':');
  if (colon == std::string_view::npos || colon == 0) {
    throw std::invalid_argument("tcp endpoint needs host:port");
  }
  ep.host = std::string(rest.substr(0, colon));
  try {
    ep.port = std::stoi(std::string(rest.substr(colon + 1)));
  } catch (const std::exception&) {
    throw std::invalid_argument("bad port in endpoint '" + std::string(spec) + "'");
  }
  if (ep.port <= 0 || ep.port > 65535) throw std::invalid_argument("port out of range");
  return ep;
}

bool Endpoint::looks_like_endpoint(std::string_view spec) {
  return spec.rfind("tcp://", 0) == 0 || spec.rfind("exec:", 0) == 0;
}

std::string Endpoint::to_string() const {
  if (kind == Kind::kExec) return "exec:" + command;
  return "tcp://" + host + ":" + std::to_string(port);
}

std::unique_ptr<LineChannel> open_channel(const Endpoint& endpoint, std::chrono::milliseconds timeout) {
  return endpoint.kind == Endpoint::Kind::kTcp ? open_tcp(endpoint, timeout) : open_exec(endpoint, timeout);
}

// ---------------------------------------------------------------------------
// RemoteSession

RemoteSession::RemoteSession(Endpoint endpoint, RemoteOptions options)
    : endpoint_(std::move(endpoint)), options_(options) {}

nlohmann::json RemoteSession::call(nlohmann::json request) {
  std::lock_guard lock(mutex_);
  const std::int64_t id = next_id_++;
  request["id"] = id;
  const std::string line = request.dump();

  std::string reply;
  std::string last_error;
  const int attempts = std::max(0, options_.retries) + 1;
  bool delivered = false;
  for (int attempt = 0; attempt < attempts && !delivered; ++attempt) {
    if (attempt > 0) std::this_thread::sleep_for(options_.backoff * attempt);
    try {
      if (!channel_) channel_ = open_channel(endpoint_, options_.timeout);
      channel_->send_line(line);
      reply = channel_->read_line();
      delivered = true;
    } catch (const TransportError& e) {
      channel_.reset();
      last_error = e.what();
    }
  }
  if (!delivered) {
    throw TransportError(endpoint_.to_string() + " unreachable after " + std::to_string(attempts) +
                         " attempts: " + last_error);
  }

  nlohmann::json response;
  try {
    response = nlohmann::json::parse(reply);
  } catch (const nlohmann::json::parse_error& e) {
    channel_.reset();
    throw ProtocolError(std::string("malformed response: ") + e.what());
  }
  if (!response.is_object()) throw ProtocolError("response is not a JSON object");
  if (!response.contains("id") || response["id"] != id) {
    channel_.reset();
    throw ProtocolError("response id does not match request id " + std::to_string(id));
  }
  if (response.contains("error")) {
    throw RemoteError(endpoint_.to_string() + ": " + response["error"].dump());
  }
  return response;
}

// ---------------------------------------------------------------------------
// Validation

Vector validate_log_row(const nlohmann::json& row, std::size_t expected_size, double tolerance) {
  if (!row.is_array()) throw ProtocolError("log-probability row is not an array");
  if (expected_size != 0 && row.size() != expected_size) {
    throw ProtocolError("log-probability row has " + std::to_string(row.size()) + " entries, expected " +
                        std::to_string(expected_size));
  }
  Vector out;
  out.reserve(row.size());
  for (const auto& v : row) out.push_back(parse_log_entry(v));
  const double lse = log_sum_exp(out);
  if (!std::isfinite(lse) || std::abs(std::exp(lse) - 1.0) > tolerance) {
    throw ProtocolError("log-probability row has total mass " + std::to_string(std::exp(lse)));
  }
  for (double& v : out) v -= lse;
  return out;
}

Vector validate_probabilities(const nlohmann::json& probs, std::size_t expected_size, double tolerance) {
  if (!probs.is_array()) throw ProtocolError("probability vector is not an array");
  if (expected_size != 0 && probs.size() != expected_size) {
    throw ProtocolError("probability vector has " + std::to_string(probs.size()) + " entries, expected " +
                        std::to_string(expected_size));
  }
  Vector out;
  double sum = 0.0;
  for (const auto& v : probs) {
    if (!v.is_number()) throw ProtocolError("probability entry is not a number");
    const double p = v.get<double>();
    if (!(p >= 0.0) || !std::isfinite(p)) throw ProtocolError("probability entry out of range");
    out.push_back(p);
    sum += p;
  }
  if (std::abs(sum - 1.0) > tolerance) {
    throw ProtocolError("probabilities sum to " + std::to_string(sum));
  }
  for (double& p : out) p /= sum;
  return out;
}

// ---------------------------------------------------------------------------
// Remote models

RemoteMaskedLm::RemoteMaskedLm(std::shared_ptr<RemoteSession> session, std::size_t vocab_size)
    : session_(std::move(session)), vocab_size_(vocab_size) {}

std::vector<Vector> RemoteMaskedLm::mask_logprobs(std::span<const TokenId> tokens,
                                                  std::span<const std::size_t> mask_positions) const {
  nlohmann::json request = {
      {"op", "mask_logprobs"},
      {"tokens", std::vector<TokenId>(tokens.begin(), tokens.end())},
      {"mask_positions", std::vector<std::size_t>(mask_positions.begin(), mask_positions.end())},
  };
  const nlohmann::json response = session_->call(std::move(request));
  if (!response.contains("logprobs") || !response["logprobs"].is_array()) {
    throw ProtocolError("mask_logprobs response lacks 'logprobs'");
  }
  const auto& rows = response["logprobs"];
  if (rows.size() != mask_positions.size()) {
    throw ProtocolError("expected " + std::to_string(mask_positions.size()) + " rows, got " +
                        std::to_string(rows.size()));
  }
  std::vector<Vector> out;
  for (const auto& row : rows) out.push_back(validate_log_row(row, vocab_size_, session_->options().tolerance));
  return out;
}

RemoteScorer::RemoteScorer(std::shared_ptr<RemoteSession> session) : session_(std::move(session)) {}

double RemoteScorer::perplexity(std::string_view text) const {
  const nlohmann::json response = session_->call({{"op", "ppl"}, {"text", text}});
  if (!response.contains("ppl") || !response["ppl"].is_number()) {
    throw ProtocolError("ppl response lacks a numeric 'ppl'");
  }
  const double ppl = response["ppl"].get<double>();
  if (!(ppl > 0.0) || !std::isfinite(ppl)) throw ProtocolError("perplexity must be positive and finite");
  return ppl;
}

RemoteClassifier::RemoteClassifier(std::shared_ptr<RemoteSession> session, std::size_t num_classes)
    : session_(std::move(session)), classes_(num_classes) {}

Vector RemoteClassifier::predict(const ClassifierInput& input) const {
  nlohmann::json request = {{"op", "classify"}};
  if (input.premise) {
    request["premise"] = *input.premise;
    request["hypothesis"] = input.text;
  } else {
    request["text"] = input.text;
  }
  const nlohmann::json response = session_->call(std::move(request));
  if (!response.contains("probs")) throw ProtocolError("classify response lacks 'probs'");
  return validate_probabilities(response["probs"], classes_, session_->options().tolerance);
}

RemoteEntityRecognizer::RemoteEntityRecognizer(std::shared_ptr<RemoteSession> session)
    : session_(std::move(session)) {}

std::vector<std::string> RemoteEntityRecognizer::recognize(std::string_view text) const {
  const nlohmann::json response = session_->call({{"op", "ner"}, {"text", text}});
  if (!response.contains("entities") || !response["entities"].is_array()) {
    throw ProtocolError("ner response lacks 'entities'");
  }
  std::vector<std::string> out;
  for (const auto& e : response["entities"]) {
    if (!e.is_string()) throw ProtocolError("entity is not a string");
    auto phrase = e.get<std::string>();
    if (phrase.empty() || text.find(phrase) == std::string_view::npos) {
      throw ProtocolError("entity '" + phrase + "' does not occur in the text");
    }
    out.push_back(std::move(phrase));
  }
  return out;
}

ExternalModel connect_external_model(std::string_view endpoint, ModelRole role, std::size_t output_size,
                                     const RemoteOptions& options) {
  auto session = std::make_shared<RemoteSession>(Endpoint::parse(endpoint), options);
  switch (role) {
    case ModelRole::kMlm:
      return std::shared_ptr<MaskedLanguageModel>(std::make_shared<RemoteMaskedLm>(session, output_size));
    case ModelRole::kScorer:
      return std::shared_ptr<CausalScorer>(std::make_shared<RemoteScorer>(session));
    case ModelRole::kClassifier:
      return std::shared_ptr<Classifier>(std::make_shared<RemoteClassifier>(session, output_size));
    case ModelRole::kNer:
      return std::shared_ptr<EntityRecognizer>(std::make_shared<RemoteEntityRecognizer>(session));
  }
  throw std::invalid_argument("unknown model role");
}

// ---------------------------------------------------------------------------
// Serving side

std::string handle_request_line(const std::string& line, const ModelBindings& models) {
  nlohmann::json id = nullptr;
  try {
    const auto request = nlohmann::json::parse(line);
    id = request.value("id", nlohmann::json(nullptr));
    const std::string op = request.at("op").get<std::string>();
    nlohmann::json response = {{"id", id}};
    if (op == "mask_logprobs" && models.mlm != nullptr) {
      const auto tokens = request.at("tokens").get<std::vector<TokenId>>();
      const auto positions = request.at("mask_positions").get<std::vector<std::size_t>>();
      nlohmann::json rows = nlohmann::json::array();
      for (const auto& row : models.mlm->mask_logprobs(tokens, positions)) rows.push_back(log_row_to_json(row));
      response["logprobs"] = std::move(rows);
    } else if (op == "ppl" && models.scorer != nullptr) {
      response["ppl"] = models.scorer->perplexity(request.at("text").get<std::string>());
    } else if (op == "classify" && models.classifier != nullptr) {
      ClassifierInput input;
      if (request.contains("premise")) {
        input.premise = request.at("premise").get<std::string>();
        input.text = request.at("hypothesis").get<std::string>();
      } else {
        input.text = request.at("text").get<std::string>();
      }
      response["probs"] = models.classifier->predict(input);
    } else if (op == "ner" && models.ner != nullptr) {
      response["entities"] = models.ner->recognize(request.at("text").get<std::string>());
    } else {
      response["error"] = "unsupported op '" + op + "'";
    }
    return response.dump();
  } catch (const std::exception& e) {
    return nlohmann::json{{"id", id}, {"error", e.what()}}.dump();
  }
}

struct ProtocolServer::Impl {
  Handler handler;
  int listen_fd = -1;
  std::atomic<bool> running{true};
  std::thread acceptor;
  std::mutex mutex;
  std::vector<int> client_fds;
  std::vector<std::thread> workers;

  void serve(int fd) {
    SocketChannel channel(fd);
    try {
      for (;;) channel.send_line(handler(channel.read_line()));
    } catch (const TransportError&) {
      // peer went away
    }
  }
};

ProtocolServer::ProtocolServer(Handler handler, int port) : impl_(std::make_unique<Impl>()) {
  impl_->handler = std::move(handler);
  impl_->listen_fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (impl_->listen_fd < 0) throw TransportError("socket failed: " + errno_text());
  const int yes = 1;
  ::setsockopt(impl_->listen_fd, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons(static_cast<uint16_t>(port));
  if (::bind(impl_->listen_fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 ||
      ::listen(impl_->listen_fd, 16) != 0) {
    ::close(impl_->listen_fd);
    throw TransportError("cannot listen on port " + std::to_string(port) + ": " + errno_text());
  }
  socklen_t len = sizeof addr;
  ::getsockname(impl_->listen_fd, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);

  impl_->acceptor = std::thread([impl = impl_.get()] {
    while (impl->running) {
      const int fd = ::accept(impl->listen_fd, nullptr, nullptr);
      if (fd < 0) {
        if (!impl->running) break;
        if (errno == EINTR) continue;
        break;
      }
      std::lock_guard lock(impl->mutex);
      impl->client_fds.push_back(fd);
      impl->workers.emplace_back([impl, fd] { impl->serve(fd); });
    }
  });
}

void ProtocolServer::stop() {
  if (!impl_ || !impl_->running.exchange(false)) return;
  ::shutdown(impl_->listen_fd, SHUT_RDWR);
  ::close(impl_->listen_fd);
  if (impl_->acceptor.joinable()) impl_->acceptor.join();
  std::lock_guard lock(impl_->mutex);
  for (int fd : impl_->client_fds) ::shutdown(fd, SHUT_RDWR);
  for (auto& w : impl_->workers) {
    if (w.joinable()) w.join();
  }
}

ProtocolServer::~ProtocolServer() { stop(); }

}  // namespace cbs
