#include "graffl/transport.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <chrono>
#include <cstring>

#include "graffl/error.hpp"

namespace graffl {

// ---------------------------------------------------------------------------
// In-process

struct InProcessNetwork::Shared {
    explicit Shared(std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) to_site.push_back(std::make_unique<BlockingQueue<std::optional<Frame>>>());
    }
    BlockingQueue<Inbound> to_coordinator;
    std::vector<std::unique_ptr<BlockingQueue<std::optional<Frame>>>> to_site;
};

class InProcessNetwork::CoordinatorEnd : public CoordinatorLink {
public:
    explicit CoordinatorEnd(std::shared_ptr<Shared> shared) : shared_(std::move(shared)) {}

    [[nodiscard]] std::size_t connections() const override { return shared_->to_site.size(); }

    void send(std::size_t connection, const Frame& frame) override {
        if (closed_) throw Error(ErrorCode::TransportClosed, "coordinator link is closed");
        shared_->to_site.at(connection)->push(frame);
    }

    Inbound receive() override { return shared_->to_coordinator.pop(); }

    void close() override {
        if (closed_.exchange(true)) return;
        for (auto& q : shared_->to_site) q->push(std::nullopt);
    }

private:
    std::shared_ptr<Shared> shared_;
    std::atomic<bool> closed_{false};
};

class InProcessNetwork::SiteEnd : public SiteLink {
public:
    SiteEnd(std::shared_ptr<Shared> shared, std::size_t index) : shared_(std::move(shared)), index_(index) {}

    void send(const Frame& frame) override {
        if (closed_) throw Error(ErrorCode::TransportClosed, "site link is closed");
        shared_->to_coordinator.push({index_, frame});
    }

    std::optional<Frame> receive() override {
        if (closed_) return std::nullopt;
        return shared_->to_site[index_]->pop();
    }

    void close() override {
        if (closed_.exchange(true)) return;
        shared_->to_coordinator.push({index_, std::nullopt});
    }

private:
    std::shared_ptr<Shared> shared_;
    std::size_t index_;
    std::atomic<bool> closed_{false};
};

InProcessNetwork::InProcessNetwork(std::size_t sites) : shared_(std::make_shared<Shared>(sites)) {
    coordinator_ = std::make_unique<CoordinatorEnd>(shared_);
    for (std::size_t i = 0; i < sites; ++i) sites_.push_back(std::make_unique<SiteEnd>(shared_, i));
}

InProcessNetwork::~InProcessNetwork() = default;

CoordinatorLink& InProcessNetwork::coordinator() { return *coordinator_; }
SiteLink& InProcessNetwork::site(std::size_t index) { return *sites_.at(index); }
std::size_t InProcessNetwork::sites() const noexcept { return sites_.size(); }

void RecordingSiteLink::send(const Frame& frame) {
    {
        std::lock_guard lock(mu_);
        bytes_.insert(bytes_.end(), frame.begin(), frame.end());
    }
    inner_.send(frame);
}

std::vector<std::uint8_t> RecordingSiteLink::captured() const {
    std::lock_guard lock(mu_);
    return bytes_;
}

// ---------------------------------------------------------------------------
// Sockets

namespace {

[[noreturn]] void sys_fail(ErrorCode code, const std::string& what) {
    throw Error(code, what + ": " + std::strerror(errno));
}

bool write_all(int fd, const std::uint8_t* data, std::size_t size) {
    while (size > 0) {
        const ssize_t n = ::send(fd, data, size, MSG_NOSIGNAL);
        if (n < 0) {
            if (errno == EINTR) continue;
            return false;
        }
        data += n;
        size -= static_cast<std::size_t>(n);
    }
    return true;
}

bool read_exact(int fd, std::uint8_t* data, std::size_t size) {
    while (size > 0) {
        const ssize_t n = ::recv(fd, data, size, 0);
        if (n == 0) return false;
        if (n < 0) {
            if (errno == EINTR) continue;
            return false;
        }
        data += n;
        size -= static_cast<std::size_t>(n);
    }
    return true;
}

std::optional<Frame> read_frame(int fd) {
    Frame frame(kFrameHeaderSize);
    if (!read_exact(fd, frame.data(), kFrameHeaderSize)) return std::nullopt;
    const std::size_t len = frame_payload_length(frame);
    if (len > kMaxPayloadSize) return std::nullopt;
    frame.resize(kFrameHeaderSize + len);
    if (len > 0 && !read_exact(fd, frame.data() + kFrameHeaderSize, len)) return std::nullopt;
    return frame;
}

void set_nodelay(int fd) {
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

}  // namespace

Endpoint Endpoint::parse(const std::string& text) {
    const auto colon = text.rfind(':');
    if (colon == std::string::npos) throw Error(ErrorCode::ConfigError, "address must be host:port, got '" + text + "'");
    Endpoint e;
    e.host = text.substr(0, colon);
    const std::string port = text.substr(colon + 1);
    try {
        const unsigned long value = std::stoul(port);
        if (value > 65535) throw std::out_of_range("port");
        e.port = static_cast<std::uint16_t>(value);
    } catch (const std::exception&) {
        throw Error(ErrorCode::ConfigError, "invalid port in '" + text + "'");
    }
    return e;
}

SocketCoordinatorLink::SocketCoordinatorLink(const Endpoint& endpoint, std::size_t sites)
    : expected_(sites), captures_(sites) {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) sys_fail(ErrorCode::TransportClosed, "socket");
    int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(endpoint.port);
    if (endpoint.host.empty() || endpoint.host == "*" || endpoint.host == "0.0.0.0") {
        addr.sin_addr.s_addr = htonl(INADDR_ANY);
    } else if (endpoint.host == "localhost") {
        addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    } else if (::inet_pton(AF_INET, endpoint.host.c_str(), &addr.sin_addr) != 1) {
        ::close(listen_fd_);
        throw Error(ErrorCode::ConfigError, "cannot listen on host '" + endpoint.host + "'");
    }
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0) {
        const int saved = errno;
        ::close(listen_fd_);
        errno = saved;
        sys_fail(ErrorCode::TransportClosed, "bind");
    }
    if (::listen(listen_fd_, static_cast<int>(sites) + 4) < 0) sys_fail(ErrorCode::TransportClosed, "listen");
    socklen_t len = sizeof(addr);
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
}

SocketCoordinatorLink::~SocketCoordinatorLink() {
    close();
    if (listen_fd_ >= 0) ::close(listen_fd_);
}

void SocketCoordinatorLink::accept_all() {
    while (fds_.size() < expected_) {
        const int fd = ::accept(listen_fd_, nullptr, nullptr);
        if (fd < 0) {
            if (errno == EINTR) continue;
            sys_fail(ErrorCode::TransportClosed, "accept");
        }
        set_nodelay(fd);
        const std::size_t conn = fds_.size();
        fds_.push_back(fd);
        readers_.emplace_back([this, conn, fd] { reader_loop(conn, fd); });
    }
}

void SocketCoordinatorLink::reader_loop(std::size_t connection, int fd) {
    for (;;) {
        auto frame = read_frame(fd);
        if (!frame) {
            inbound_.push({connection, std::nullopt});
            return;
        }
        {
            std::lock_guard lock(capture_mu_);
            captures_[connection].insert(captures_[connection].end(), frame->begin(), frame->end());
        }
        inbound_.push({connection, std::move(frame)});
    }
}

void SocketCoordinatorLink::send(std::size_t connection, const Frame& frame) {
    if (connection >= fds_.size() || !write_all(fds_[connection], frame.data(), frame.size())) {
        throw Error(ErrorCode::TransportClosed, "send to connection " + std::to_string(connection) + " failed");
    }
}

Inbound SocketCoordinatorLink::receive() { return inbound_.pop(); }

void SocketCoordinatorLink::close() {
    if (closed_) return;
    closed_ = true;
    for (int fd : fds_) ::shutdown(fd, SHUT_RDWR);
    for (auto& t : readers_)
        if (t.joinable()) t.join();
    for (int fd : fds_) ::close(fd);
    fds_.clear();
}

std::vector<std::uint8_t> SocketCoordinatorLink::inbound_capture(std::size_t connection) const {
    std::lock_guard lock(capture_mu_);
    return captures_.at(connection);
}

SocketSiteLink::SocketSiteLink(const Endpoint& endpoint, int timeout_ms) {
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    const std::string host = endpoint.host.empty() ? "127.0.0.1" : endpoint.host;
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
    for (;;) {
        addrinfo* res = nullptr;
        if (::getaddrinfo(host.c_str(), std::to_string(endpoint.port).c_str(), &hints, &res) != 0 || !res) {
            throw Error(ErrorCode::ConfigError, "cannot resolve '" + host + "'");
        }
        fd_ = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
        const bool ok = fd_ >= 0 && ::connect(fd_, res->ai_addr, res->ai_addrlen) == 0;
        ::freeaddrinfo(res);
        if (ok) break;
        if (fd_ >= 0) ::close(fd_);
        fd_ = -1;
        if (std::chrono::steady_clock::now() > deadline) sys_fail(ErrorCode::TransportClosed, "connect");
        std::this_thread::sleep_for(std::chrono::milliseconds(50));
    }
    set_nodelay(fd_);
}

SocketSiteLink::~SocketSiteLink() { close(); }

void SocketSiteLink::send(const Frame& frame) {
    if (fd_ < 0 || !write_all(fd_, frame.data(), frame.size())) {
        throw Error(ErrorCode::TransportClosed, "site send failed");
    }
}

std::optional<Frame> SocketSiteLink::receive() {
    if (fd_ < 0) return std::nullopt;
    return read_frame(fd_);
}

void SocketSiteLink::close() {
    if (fd_ < 0) return;
    ::shutdown(fd_, SHUT_RDWR);
    ::close(fd_);
    fd_ = -1;
}

}  // namespace graffl
