// Simulated MMU: per-principal page permission tables over the shared
// segment. Every member data access is mediated here; legal first touches
// demand-map pages, illegal accesses fault with no partial effect.
#pragma once

#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "arbiter/asms.hpp"

namespace arbiter {

enum class AccessKind : uint8_t { Read, Write };
enum class FaultPolicy : uint8_t { Terminate, Handle };
enum class FaultDisposition : uint8_t { Terminated, Handled };

struct PagePerm {
  bool read = false;
  bool write = false;
  bool mapped = false;  // demand-paged yet?

  bool operator==(const PagePerm&) const = default;
};

enum class AccessOutcome : uint8_t { OkMapped, OkDemandPaged, Fault };

struct FaultEvent {
  uint32_t principal = 0;
  uint32_t addr = 0;
  AccessKind kind = AccessKind::Read;
  FaultDisposition disposition = FaultDisposition::Terminated;
};

enum class ProtStatus : uint8_t {
  Ok,
  MonitorOnly,
  RangeUnallocated,
  UnknownPrincipal,
};

struct AccessResult {
  AccessOutcome outcome = AccessOutcome::Fault;
  FaultDisposition disposition = FaultDisposition::Terminated;  // on Fault
  std::vector<uint8_t> data;  // reads only
};

class GroupProtection {
 public:
  GroupProtection(AsmsStore& store, uint32_t monitor_id)
      : store_(store), monitor_id_(monitor_id) {}

  // Membership and coverage changes are monitor-internal: the owning group
  // calls them while servicing requests.
  void add_member(uint32_t id);
  void remove_member(uint32_t id);
  void map_range(PageRange range);
  void unmap_range(PageRange range);

  // Permission configuration is the monitor's privilege; any other caller
  // is rejected. Mapped bits survive reconfiguration.
  ProtStatus set_page_perms(uint32_t caller, uint32_t member, PageRange range,
                            bool read, bool write);

  void set_fault_policy(uint32_t member, FaultPolicy policy);
  FaultPolicy fault_policy(uint32_t member) const;

  // MMU walk: all touched pages must grant `kind`, else Fault with no
  // mapped-bit change. Legal untouched pages become mapped; the outcome
  // reports OkDemandPaged when any first touch happened.
  AccessOutcome check_access(uint32_t member, uint32_t addr, uint64_t len,
                             AccessKind kind);

  AccessResult read_mem(uint32_t member, uint32_t addr, uint64_t len);
  AccessResult write_mem(uint32_t member, uint32_t addr,
                         std::span<const uint8_t> data);

  // Ordered (range, perm) list with equal adjacent entries coalesced.
  std::optional<std::vector<std::pair<PageRange, PagePerm>>> snapshot(
      uint32_t member) const;

  std::optional<PagePerm> page_perm(uint32_t member, uint32_t page) const;
  std::vector<uint32_t> coverage() const;
  std::vector<uint32_t> members() const;
  bool coverage_equal_across_members(std::string* why = nullptr) const;

  std::vector<FaultEvent> fault_events() const;
  size_t fault_count() const;
  // `FAULT principal=<id> addr=<hex> kind=<r|w> disp=<term|handled>` lines.
  std::string fault_log_text() const;

  // Full copy of every member's table under one lock, for invariant sweeps.
  std::map<uint32_t, std::map<uint32_t, PagePerm>> tables_copy() const;

  uint64_t perm_update_count() const;
  uint64_t state_digest() const;

 private:
  AccessOutcome check_locked(uint32_t member, uint32_t addr, uint64_t len,
                             AccessKind kind);
  FaultDisposition record_fault_locked(uint32_t member, uint32_t addr,
                                       AccessKind kind);

  mutable std::mutex mu_;
  AsmsStore& store_;
  uint32_t monitor_id_;
  std::set<uint32_t> coverage_;  // group-wide allocated page set
  std::map<uint32_t, std::map<uint32_t, PagePerm>> tables_;  // member -> pages
  std::map<uint32_t, FaultPolicy> policies_;
  std::vector<FaultEvent> faults_;
  uint64_t perm_updates_ = 0;
};

const char* access_outcome_name(AccessOutcome o);

}  // namespace arbiter
