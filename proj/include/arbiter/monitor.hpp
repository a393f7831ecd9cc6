// The per-group reference monitor: principal registry, request
// authentication/authorization, thread lifecycle, and group-wide
// permission propagation. All requests are serviced serially.
#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "arbiter/asms.hpp"
#include "arbiter/protection.hpp"
#include "arbiter/wire.hpp"

namespace arbiter {

// Transport-level peer identity. Assigned by the transport when a
// connection is opened and bound to a principal at registration; never
// derived from frame contents.
struct Credential {
  uint64_t conn_id = 0;
  int32_t pid = -1;  // informational (OS peer credential when available)
};

enum class PrincipalStatus : uint8_t { Running, Exited, Terminated };

struct Principal {
  uint32_t id = 0;
  uint32_t ab_identity = 0;  // upper 31 bits group id, low bit role
  Label label;
  Ownership ownership;
  std::optional<uint32_t> parent;
  PrincipalStatus status = PrincipalStatus::Running;
  std::string entry;
  bool joined = false;
  int exit_status = 0;
  std::optional<FaultEvent> fault;  // set when terminated by a fault
};

struct GroupStats {
  uint64_t requests = 0;
  uint64_t ok = 0;
  uint64_t denied = 0;
  uint64_t malformed = 0;
  uint64_t errors = 0;
  uint64_t perm_range_updates = 0;
  uint64_t blocks_created = 0;
  uint64_t blocks_recycled = 0;
  uint64_t blocks_revived = 0;
  uint64_t large_unmapped = 0;
  uint64_t faults = 0;
  uint64_t live_blocks = 0;
  uint64_t live_objects = 0;
  uint64_t running_members = 0;
};

const char* principal_status_name(PrincipalStatus s);

class Group {
 public:
  static constexpr uint32_t kArbiterId = 0;

  Group();

  uint32_t group_id() const { return group_id_; }
  uint32_t arbiter_identity() const { return (group_id_ << 1) | 1u; }

  // Full wire path: decode, authenticate, authorize, dispatch, encode.
  // Blocks when the request is a join on a running child; the response
  // arrives once the child exits. Safe to call from many threads.
  std::vector<uint8_t> handle_frame(const Credential& cred,
                                    std::span<const uint8_t> frame);

  // Typed path; a deferred join yields a future instead of blocking.
  using HandleResult = std::variant<Response, std::shared_future<Response>>;
  HandleResult handle_request(const Credential& cred, const Request& req);

  // Trusted runtime hooks, used by the embedding boot path (the simulated
  // kernel side): attach the connection of a thread the monitor created,
  // report exits, observe closed connections.
  bool bind_credential(const Credential& cred, uint32_t principal);
  void connection_closed(const Credential& cred);
  void member_exited(uint32_t id, int exit_status);
  // Called (outside the monitor lock) for every created thread.
  void set_entry_callback(
      std::function<void(uint32_t child, const std::string& entry)> cb);

  // Mediated data plane. A fault under the Terminate policy marks the
  // principal Terminated and completes any pending join on it.
  AccessResult member_read(uint32_t id, uint32_t addr, uint64_t len);
  AccessResult member_write(uint32_t id, uint32_t addr,
                            std::span<const uint8_t> data);

  std::optional<Principal> principal_info(uint32_t id) const;
  std::vector<uint32_t> running_members() const;

  GroupProtection& protection() { return prot_; }
  const AsmsAllocator& allocator() const { return alloc_; }
  AsmsStore& store() { return store_; }

  GroupStats stats() const;
  std::string audit_text() const;
  uint64_t audit_digest() const;
  std::string dump_layout(const CategoryNamer& namer) const;

  // Global invariant: every running member's permission table equals the
  // recomputation from the registry over all live blocks.
  bool consistency_check(std::string* why = nullptr) const;
  // Digest of security-relevant state (registry, blocks, tables, store);
  // denied and malformed requests must leave it unchanged.
  uint64_t state_digest() const;

  void set_category_counter(uint64_t next);  // test hook for exhaustion

 private:
  struct PendingJoin {
    uint32_t child = 0;
    uint32_t seq = 0;
    std::promise<Response> promise;
    std::shared_future<Response> future;
  };

  Response dispatch_locked(const Credential& cred, const Request& req,
                           bool& deferred, std::shared_future<Response>& fut);
  Response do_register_locked(const Credential& cred, const RegisterReq& r,
                              uint32_t seq);
  uint32_t add_principal_locked(const Label& label, const Ownership& own,
                                std::optional<uint32_t> parent,
                                std::string entry);
  void propagate_block_locked(const BlockInfo& block);
  void init_member_perms_locked(uint32_t id);
  void finish_member_locked(uint32_t id, PrincipalStatus status,
                            int exit_status, std::optional<FaultEvent> fault);
  void audit_locked(int64_t from, const std::string& op, Status decision,
                    const std::string& detail);
  Permission object_perms_locked(const Principal& p, uint32_t addr,
                                 bool& found) const;
  void drain_entry_queue();

  static uint32_t next_group_id();

  mutable std::mutex mu_;
  uint32_t group_id_ = 0;
  AsmsStore store_;
  AsmsAllocator alloc_;
  GroupProtection prot_;

  std::map<uint32_t, Principal> principals_;
  std::vector<uint32_t> member_order_;  // running members, registration order
  std::map<uint64_t, uint32_t> conn_bindings_;  // credential -> principal
  uint32_t next_principal_ = 1;
  CategoryCounter category_counter_;
  bool group_fatal_ = false;

  std::vector<PendingJoin> pending_joins_;
  std::vector<std::string> audit_;
  uint64_t arrivals_ = 0;
  GroupStats counters_;

  std::function<void(uint32_t, const std::string&)> entry_cb_;
  std::deque<std::pair<uint32_t, std::string>> entry_queue_;
};

}  // namespace arbiter
