#pragma once

#include <condition_variable>
#include <cstddef>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "graffl/wire.hpp"

namespace graffl {

/// Site end of a duplex channel. receive() returns nullopt once the peer closed.
class SiteLink {
public:
    virtual ~SiteLink() = default;
    virtual void send(const Frame& frame) = 0;
    virtual std::optional<Frame> receive() = 0;
    virtual void close() = 0;
};

/// A frame (or a close notification, frame == nullopt) from one connection.
struct Inbound {
    std::size_t connection = 0;
    std::optional<Frame> frame;
};

/// Coordinator end: one outbound channel per connection and a single
/// inbound stream delivering frames from all connections in arrival order.
class CoordinatorLink {
public:
    virtual ~CoordinatorLink() = default;
    [[nodiscard]] virtual std::size_t connections() const = 0;
    virtual void send(std::size_t connection, const Frame& frame) = 0;
    virtual Inbound receive() = 0;
    virtual void close() = 0;
};

template <typename T>
class BlockingQueue {
public:
    void push(T value) {
        {
            std::lock_guard lock(mu_);
            items_.push_back(std::move(value));
        }
        cv_.notify_one();
    }

    T pop() {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [this] { return !items_.empty(); });
        T value = std::move(items_.front());
        items_.pop_front();
        return value;
    }

private:
    std::mutex mu_;
    std::condition_variable cv_;
    std::deque<T> items_;
};

/**
 * In-process transport: S site links wired to one coordinator link through
 * queues. Frames are still encoded bytes, so the wire grammar is exercised
 * exactly as on a socket.
 */
class InProcessNetwork {
public:
    explicit InProcessNetwork(std::size_t sites);
    ~InProcessNetwork();

    InProcessNetwork(const InProcessNetwork&) = delete;
    InProcessNetwork& operator=(const InProcessNetwork&) = delete;

    CoordinatorLink& coordinator();
    SiteLink& site(std::size_t index);
    [[nodiscard]] std::size_t sites() const noexcept;

private:
    struct Shared;
    class CoordinatorEnd;
    class SiteEnd;
    std::shared_ptr<Shared> shared_;
    std::unique_ptr<CoordinatorEnd> coordinator_;
    std::vector<std::unique_ptr<SiteEnd>> sites_;
};

/// Records every frame a site sends, byte for byte.
class RecordingSiteLink : public SiteLink {
public:
    explicit RecordingSiteLink(SiteLink& inner) : inner_(inner) {}

    void send(const Frame& frame) override;
    std::optional<Frame> receive() override { return inner_.receive(); }
    void close() override { inner_.close(); }

    [[nodiscard]] std::vector<std::uint8_t> captured() const;

private:
    SiteLink& inner_;
    mutable std::mutex mu_;
    std::vector<std::uint8_t> bytes_;
};

/// "host:port"; host may be empty or "*" for any address when listening.
struct Endpoint {
    std::string host;
    std::uint16_t port = 0;

    static Endpoint parse(const std::string& text);
};

/**
 * TCP coordinator: listens on `endpoint` and accepts exactly `sites`
 * connections. One reader thread per connection feeds the inbound stream.
 * Raw bytes read from each connection are kept for inspection.
 */
class SocketCoordinatorLink : public CoordinatorLink {
public:
    SocketCoordinatorLink(const Endpoint& endpoint, std::size_t sites);
    ~SocketCoordinatorLink() override;

    /// Port actually bound (useful with port 0).
    [[nodiscard]] std::uint16_t port() const noexcept { return port_; }

    /// Blocks until every site has connected.
    void accept_all();

    [[nodiscard]] std::size_t connections() const override { return expected_; }
    void send(std::size_t connection, const Frame& frame) override;
    Inbound receive() override;
    void close() override;

    /// Bytes received so far on a connection.
    [[nodiscard]] std::vector<std::uint8_t> inbound_capture(std::size_t connection) const;

private:
    void reader_loop(std::size_t connection, int fd);

    int listen_fd_ = -1;
    std::uint16_t port_ = 0;
    std::size_t expected_;
    std::vector<int> fds_;
    std::vector<std::thread> readers_;
    BlockingQueue<Inbound> inbound_;
    mutable std::mutex capture_mu_;
    std::vector<std::vector<std::uint8_t>> captures_;
    bool closed_ = false;
};

class SocketSiteLink : public SiteLink {
public:
    /// Connects, retrying for up to `timeout_ms` while the coordinator starts.
    explicit SocketSiteLink(const Endpoint& endpoint, int timeout_ms = 10000);
    ~SocketSiteLink() override;

    void send(const Frame& frame) override;
    std::optional<Frame> receive() override;
    void close() override;

private:
    int fd_ = -1;
};

}  // namespace graffl
