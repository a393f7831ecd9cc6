#include "arbiter/protection.hpp"

#include <sstream>

namespace arbiter {

namespace {
constexpr uint64_t kFnvOffset = 0xcbf29ce484222325ull;
constexpr uint64_t kFnvPrime = 0x100000001b3ull;

uint64_t fnv_u64(uint64_t h, uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    h ^= (v >> (i * 8)) & 0xff;
    h *= kFnvPrime;
  }
  return h;
}
}  // namespace

void GroupProtection::add_member(uint32_t id) {
  std::lock_guard lock(mu_);
  auto& table = tables_[id];
  for (uint32_t page : coverage_) table.emplace(page, PagePerm{});
  policies_.emplace(id, FaultPolicy::Terminate);
}

void GroupProtection::remove_member(uint32_t id) {
  std::lock_guard lock(mu_);
  tables_.erase(id);
  policies_.erase(id);
}

void GroupProtection::map_range(PageRange range) {
  std::lock_guard lock(mu_);
  for (uint32_t i = 0; i < range.pages; ++i) {
    uint32_t page = range.first_page + i;
    coverage_.insert(page);
    for (auto& [id, table] : tables_) table.insert({page, PagePerm{}});
  }
}

void GroupProtection::unmap_range(PageRange range) {
  std::lock_guard lock(mu_);
  for (uint32_t i = 0; i < range.pages; ++i) {
    uint32_t page = range.first_page + i;
    coverage_.erase(page);
    for (auto& [id, table] : tables_) table.erase(page);
  }
}

ProtStatus GroupProtection::set_page_perms(uint32_t caller, uint32_t member,
                                           PageRange range, bool read,
                                           bool write) {
  std::lock_guard lock(mu_);
  if (caller != monitor_id_) return ProtStatus::MonitorOnly;
  auto table = tables_.find(member);
  if (table == tables_.end()) return ProtStatus::UnknownPrincipal;
  for (uint32_t i = 0; i < range.pages; ++i) {
    if (!coverage_.contains(range.first_page + i))
      return ProtStatus::RangeUnallocated;
  }
  for (uint32_t i = 0; i < range.pages; ++i) {
    PagePerm& perm = table->second.at(range.first_page + i);
    perm.read = read;
    perm.write = write;  // mapped bit preserved
  }
  perm_updates_ += 1;  // one range update
  return ProtStatus::Ok;
}

void GroupProtection::set_fault_policy(uint32_t member, FaultPolicy policy) {
  std::lock_guard lock(mu_);
  policies_[member] = policy;
}

FaultPolicy GroupProtection::fault_policy(uint32_t member) const {
  std::lock_guard lock(mu_);
  auto it = policies_.find(member);
  return it == policies_.end() ? FaultPolicy::Terminate : it->second;
}

AccessOutcome GroupProtection::check_locked(uint32_t member, uint32_t addr,
                                            uint64_t len, AccessKind kind) {
  if (len == 0) return AccessOutcome::OkMapped;
  if (!asms_contains(addr, len)) return AccessOutcome::Fault;
  auto table = tables_.find(member);
  if (table == tables_.end()) return AccessOutcome::Fault;
  uint32_t first = page_of(addr);
  uint32_t last = page_of(static_cast<uint32_t>(addr + len - 1));
  for (uint32_t page = first; page <= last; ++page) {
    auto it = table->second.find(page);
    if (it == table->second.end()) return AccessOutcome::Fault;
    const PagePerm& p = it->second;
    if (kind == AccessKind::Read ? !p.read : !p.write)
      return AccessOutcome::Fault;
  }
  bool first_touch = false;
  for (uint32_t page = first; page <= last; ++page) {
    PagePerm& p = table->second.at(page);
    if (!p.mapped) {
      p.mapped = true;
      first_touch = true;
    }
  }
  return first_touch ? AccessOutcome::OkDemandPaged : AccessOutcome::OkMapped;
}

AccessOutcome GroupProtection::check_access(uint32_t member, uint32_t addr,
                                            uint64_t len, AccessKind kind) {
  std::lock_guard lock(mu_);
  return check_locked(member, addr, len, kind);
}

FaultDisposition GroupProtection::record_fault_locked(uint32_t member,
                                                      uint32_t addr,
                                                      AccessKind kind) {
  auto it = policies_.find(member);
  FaultPolicy policy =
      it == policies_.end() ? FaultPolicy::Terminate : it->second;
  FaultDisposition disp = policy == FaultPolicy::Terminate
                              ? FaultDisposition::Terminated
                              : FaultDisposition::Handled;
  faults_.push_back({member, addr, kind, disp});
  return disp;
}

AccessResult GroupProtection::read_mem(uint32_t member, uint32_t addr,
                                       uint64_t len) {
  std::lock_guard lock(mu_);
  AccessOutcome outcome = check_locked(member, addr, len, AccessKind::Read);
  if (outcome == AccessOutcome::Fault) {
    return {outcome, record_fault_locked(member, addr, AccessKind::Read), {}};
  }
  AccessResult r{outcome, FaultDisposition::Handled, {}};
  r.data = store_.read(addr, static_cast<size_t>(len));
  return r;
}

AccessResult GroupProtection::write_mem(uint32_t member, uint32_t addr,
                                        std::span<const uint8_t> data) {
  std::lock_guard lock(mu_);
  AccessOutcome outcome =
      check_locked(member, addr, data.size(), AccessKind::Write);
  if (outcome == AccessOutcome::Fault) {
    return {outcome, record_fault_locked(member, addr, AccessKind::Write), {}};
  }
  store_.write(addr, data);
  return {outcome, FaultDisposition::Handled, {}};
}

std::optional<std::vector<std::pair<PageRange, PagePerm>>>
GroupProtection::snapshot(uint32_t member) const {
  std::lock_guard lock(mu_);
  auto table = tables_.find(member);
  if (table == tables_.end()) return std::nullopt;
  std::vector<std::pair<PageRange, PagePerm>> out;
  for (const auto& [page, perm] : table->second) {
    if (!out.empty()) {
      auto& [range, prev] = out.back();
      if (range.first_page + range.pages == page && prev == perm) {
        range.pages += 1;
        continue;
      }
    }
    out.push_back({{page, 1}, perm});
  }
  return out;
}

std::optional<PagePerm> GroupProtection::page_perm(uint32_t member,
                                                   uint32_t page) const {
  std::lock_guard lock(mu_);
  auto table = tables_.find(member);
  if (table == tables_.end()) return std::nullopt;
  auto it = table->second.find(page);
  if (it == table->second.end()) return std::nullopt;
  return it->second;
}

std::vector<uint32_t> GroupProtection::coverage() const {
  std::lock_guard lock(mu_);
  return {coverage_.begin(), coverage_.end()};
}

std::vector<uint32_t> GroupProtection::members() const {
  std::lock_guard lock(mu_);
  std::vector<uint32_t> out;
  for (const auto& [id, table] : tables_) out.push_back(id);
  return out;
}

bool GroupProtection::coverage_equal_across_members(std::string* why) const {
  std::lock_guard lock(mu_);
  for (const auto& [id, table] : tables_) {
    if (table.size() != coverage_.size()) {
      if (why)
        *why = "member " + std::to_string(id) + " covers " +
               std::to_string(table.size()) + " pages, group covers " +
               std::to_string(coverage_.size());
      return false;
    }
    for (uint32_t page : coverage_) {
      if (!table.contains(page)) {
        if (why)
          *why = "member " + std::to_string(id) + " missing page " +
                 std::to_string(page);
        return false;
      }
    }
  }
  return true;
}

std::vector<FaultEvent> GroupProtection::fault_events() const {
  std::lock_guard lock(mu_);
  return faults_;
}

size_t GroupProtection::fault_count() const {
  std::lock_guard lock(mu_);
  return faults_.size();
}

std::map<uint32_t, std::map<uint32_t, PagePerm>> GroupProtection::tables_copy()
    const {
  std::lock_guard lock(mu_);
  return tables_;
}

std::string GroupProtection::fault_log_text() const {
  std::lock_guard lock(mu_);
  std::ostringstream out;
  for (const FaultEvent& f : faults_) {
    out << "FAULT principal=" << f.principal << " addr=0x" << std::hex
        << f.addr << std::dec << " kind="
        << (f.kind == AccessKind::Read ? 'r' : 'w') << " disp="
        << (f.disposition == FaultDisposition::Terminated ? "term" : "handled")
        << '\n';
  }
  return out.str();
}

uint64_t GroupProtection::perm_update_count() const {
  std::lock_guard lock(mu_);
  return perm_updates_;
}

uint64_t GroupProtection::state_digest() const {
  std::lock_guard lock(mu_);
  uint64_t h = kFnvOffset;
  for (uint32_t page : coverage_) h = fnv_u64(h, page);
  for (const auto& [id, table] : tables_) {
    h = fnv_u64(h, id);
    for (const auto& [page, perm] : table) {
      h = fnv_u64(h, page);
      h = fnv_u64(h, (perm.read ? 1 : 0) | (perm.write ? 2 : 0) |
                         (perm.mapped ? 4 : 0));
    }
  }
  return h;
}

const char* access_outcome_name(AccessOutcome o) {
  switch (o) {
    case AccessOutcome::OkMapped:
      return "ok";
    case AccessOutcome::OkDemandPaged:
      return "ok-demand-paged";
    case AccessOutcome::Fault:
      return "fault";
  }
  return "?";
}

}  // namespace arbiter
