#ifndef HEGEMONY_FED_TRANSPORT_HPP
#define HEGEMONY_FED_TRANSPORT_HPP

// Message transports: an in-process loopback pair and TCP streams, both
// carrying length-prefixed JSON frames, plus a hub that merges many channels
// into one inbox for the server.

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "hegemony/fed/protocol.hpp"

namespace hegemony::fed {

using Millis = std::chrono::milliseconds;

class Channel {
public:
    virtual ~Channel() = default;
    virtual void send(const RoundMessage& m) = 0;
    /// Next message; Timeout after `timeout`, ProtocolError once the peer is gone.
    virtual RoundMessage recv(Millis timeout) = 0;
    virtual void close() = 0;
};

namespace detail {

struct LoopbackQueue {
    std::mutex mutex;
    std::condition_variable cv;
    std::deque<std::string> frames;
    bool closed = false;
};

}  // namespace detail

/// One end of an in-process pipe. Messages go through the same frame
/// encoding as TCP, so both transports exercise the wire format.
class LoopbackChannel : public Channel {
public:
    LoopbackChannel(std::shared_ptr<detail::LoopbackQueue> in, std::shared_ptr<detail::LoopbackQueue> out)
        : in_(std::move(in)), out_(std::move(out)) {}
    ~LoopbackChannel() override { close(); }

    void send(const RoundMessage& m) override {
        std::lock_guard lock(out_->mutex);
        if (out_->closed) fail(ErrorKind::ProtocolError, "loopback peer closed");
        out_->frames.push_back(encode_frame(m));
        out_->cv.notify_all();
    }

    RoundMessage recv(Millis timeout) override {
        std::unique_lock lock(in_->mutex);
        if (!in_->cv.wait_for(lock, timeout, [&] { return !in_->frames.empty() || in_->closed; }))
            fail(ErrorKind::Timeout, "no message within " + std::to_string(timeout.count()) + " ms");
        if (in_->frames.empty()) fail(ErrorKind::ProtocolError, "loopback peer closed");
        std::string frame = std::move(in_->frames.front());
        in_->frames.pop_front();
        lock.unlock();
        const auto* head = reinterpret_cast<const unsigned char*>(frame.data());
        if (frame.size() < 4 || frame_length(head) != frame.size() - 4)
            fail(ErrorKind::FormatError, "bad frame length");
        return decode_frame_body(std::string_view(frame).substr(4));
    }

    void close() override {
        for (auto* q : {in_.get(), out_.get()}) {
            std::lock_guard lock(q->mutex);
            q->closed = true;
            q->cv.notify_all();
        }
    }

private:
    std::shared_ptr<detail::LoopbackQueue> in_, out_;
};

inline std::pair<std::shared_ptr<Channel>, std::shared_ptr<Channel>> loopback_pair() {
    auto a = std::make_shared<detail::LoopbackQueue>();
    auto b = std::make_shared<detail::LoopbackQueue>();
    return {std::make_shared<LoopbackChannel>(a, b), std::make_shared<LoopbackChannel>(b, a)};
}

// ---------------------------------------------------------------- TCP

inline std::pair<std::string, std::string> split_address(const std::string& address) {
    const auto colon = address.rfind(':');
    if (colon == std::string::npos) fail(ErrorKind::FormatError, "address must be host:port, got '" + address + "'");
    return {address.substr(0, colon), address.substr(colon + 1)};
}

class TcpChannel : public Channel {
public:
    explicit TcpChannel(int fd) : fd_(fd) {
        int one = 1;
        ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    }
    ~TcpChannel() override {
        close();
        if (fd_ >= 0) ::close(fd_);
    }
    TcpChannel(const TcpChannel&) = delete;
    TcpChannel& operator=(const TcpChannel&) = delete;

    void send(const RoundMessage& m) override {
        const std::string frame = encode_frame(m);
        std::lock_guard lock(send_mutex_);
        std::size_t off = 0;
        while (off < frame.size()) {
            const ssize_t n = ::send(fd_, frame.data() + off, frame.size() - off, MSG_NOSIGNAL);
            if (n < 0) {
                if (errno == EINTR) continue;
                fail(ErrorKind::ProtocolError, "send failed: connection lost");
            }
            off += static_cast<std::size_t>(n);
        }
    }

    /// Partial frames survive a timeout: bytes already read stay buffered.
    RoundMessage recv(Millis timeout) override {
        const auto deadline = std::chrono::steady_clock::now() + timeout;
        for (;;) {
            if (pending_.size() >= 4) {
                const std::uint32_t len = frame_length(reinterpret_cast<const unsigned char*>(pending_.data()));
                if (len > (1u << 30)) fail(ErrorKind::FormatError, "frame too large");
                if (pending_.size() >= 4 + std::size_t{len}) {
                    const std::string body = pending_.substr(4, len);
                    pending_.erase(0, 4 + std::size_t{len});
                    return decode_frame_body(body);
                }
            }
            const auto left = std::chrono::duration_cast<Millis>(deadline - std::chrono::steady_clock::now());
            if (left.count() <= 0) fail(ErrorKind::Timeout, "no complete message before the deadline");
            pollfd p{fd_, POLLIN, 0};
            const int r = ::poll(&p, 1, static_cast<int>(std::min<long long>(left.count(), 200)));
            if (r < 0 && errno != EINTR) fail(ErrorKind::ProtocolError, "poll failed");
            if (r <= 0) continue;
            char buf[65536];
            const ssize_t n = ::recv(fd_, buf, sizeof(buf), 0);
            if (n == 0) fail(ErrorKind::ProtocolError, "peer closed the connection");
            if (n < 0) {
                if (errno == EINTR || errno == EAGAIN) continue;
                fail(ErrorKind::ProtocolError, "connection lost");
            }
            pending_.append(buf, static_cast<std::size_t>(n));
        }
    }

    void close() override {
        if (!closed_.exchange(true) && fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
    }

private:
    std::string pending_;
    int fd_;
    std::atomic<bool> closed_{false};
    std::mutex send_mutex_;
};

class TcpListener {
public:
    /// "host:port"; port 0 picks a free port, see port().
    explicit TcpListener(const std::string& address) {
        const auto [host, port] = split_address(address);
        addrinfo hints{};
        hints.ai_family = AF_INET;
        hints.ai_socktype = SOCK_STREAM;
        hints.ai_flags = AI_PASSIVE;
        addrinfo* res = nullptr;
        if (::getaddrinfo(host.empty() ? nullptr : host.c_str(), port.c_str(), &hints, &res) != 0 || !res)
            fail(ErrorKind::ProtocolError, "cannot resolve " + address);
        fd_ = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
        int one = 1;
        ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
        const bool ok = fd_ >= 0 && ::bind(fd_, res->ai_addr, res->ai_addrlen) == 0 && ::listen(fd_, 64) == 0;
        ::freeaddrinfo(res);
        if (!ok) fail(ErrorKind::ProtocolError, "cannot listen on " + address);
    }
    ~TcpListener() {
        if (fd_ >= 0) ::close(fd_);
    }
    TcpListener(const TcpListener&) = delete;
    TcpListener& operator=(const TcpListener&) = delete;

    int port() const {
        sockaddr_in addr{};
        socklen_t len = sizeof(addr);
        ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
        return ntohs(addr.sin_port);
    }

    std::shared_ptr<Channel> accept(Millis timeout) {
        pollfd p{fd_, POLLIN, 0};
        const int r = ::poll(&p, 1, static_cast<int>(timeout.count()));
        if (r <= 0) fail(ErrorKind::Timeout, "no client connected in time");
        const int c = ::accept(fd_, nullptr, nullptr);
        if (c < 0) fail(ErrorKind::ProtocolError, "accept failed");
        return std::make_shared<TcpChannel>(c);
    }

private:
    int fd_ = -1;
};

inline std::shared_ptr<Channel> tcp_connect(const std::string& address, Millis timeout) {
    const auto [host, port] = split_address(address);
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    for (;;) {
        addrinfo hints{};
        hints.ai_family = AF_INET;
        hints.ai_socktype = SOCK_STREAM;
        addrinfo* res = nullptr;
        if (::getaddrinfo(host.c_str(), port.c_str(), &hints, &res) == 0 && res) {
            const int fd = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
            const bool ok = fd >= 0 && ::connect(fd, res->ai_addr, res->ai_addrlen) == 0;
            ::freeaddrinfo(res);
            if (ok) return std::make_shared<TcpChannel>(fd);
            if (fd >= 0) ::close(fd);
        }
        if (std::chrono::steady_clock::now() >= deadline) fail(ErrorKind::Timeout, "cannot connect to " + address);
        std::this_thread::sleep_for(Millis(100));
    }
}

// ---------------------------------------------------------------- hub

/// Fan-in of several channels: one reader thread per channel feeds a shared
/// inbox. A channel that fails delivers a single error entry.
class Hub {
public:
    struct Entry {
        std::size_t link = 0;
        std::optional<RoundMessage> message;  // empty when the link failed
        std::string error;
    };

    Hub() = default;
    Hub(const Hub&) = delete;
    Hub& operator=(const Hub&) = delete;
    ~Hub() { shutdown(); }

    std::size_t attach(std::shared_ptr<Channel> ch) {
        std::lock_guard lock(mutex_);
        const std::size_t id = links_.size();
        links_.push_back(ch);
        readers_.emplace_back([this, id, ch] {
            while (!stopping_) {
                try {
                    auto m = ch->recv(Millis(250));
                    push({id, std::move(m), {}});
                } catch (const Error& e) {
                    if (e.kind() == ErrorKind::Timeout) continue;
                    if (!stopping_) push({id, std::nullopt, e.what()});
                    return;
                }
            }
        });
        return id;
    }

    void send(std::size_t link, const RoundMessage& m) {
        std::shared_ptr<Channel> ch;
        {
            std::lock_guard lock(mutex_);
            ch = links_.at(link);
        }
        ch->send(m);
    }

    std::size_t size() const {
        std::lock_guard lock(mutex_);
        return links_.size();
    }

    Entry pop(Millis timeout) {
        std::unique_lock lock(mutex_);
        if (!cv_.wait_for(lock, timeout, [&] { return !inbox_.empty(); }))
            fail(ErrorKind::Timeout, "no message within " + std::to_string(timeout.count()) + " ms");
        Entry e = std::move(inbox_.front());
        inbox_.pop_front();
        return e;
    }

    void shutdown() {
        stopping_ = true;
        std::vector<std::shared_ptr<Channel>> links;
        std::vector<std::thread> readers;
        {
            std::lock_guard lock(mutex_);
            links = links_;
            readers.swap(readers_);
        }
        for (auto& l : links) l->close();
        for (auto& t : readers)
            if (t.joinable()) t.join();
    }

private:
    void push(Entry e) {
        std::lock_guard lock(mutex_);
        inbox_.push_back(std::move(e));
        cv_.notify_all();
    }

    mutable std::mutex mutex_;
    std::condition_variable cv_;
    std::deque<Entry> inbox_;
    std::vector<std::shared_ptr<Channel>> links_;
    std::vector<std::thread> readers_;
    std::atomic<bool> stopping_{false};
};

}  // namespace hegemony::fed

#endif  // HEGEMONY_FED_TRANSPORT_HPP
