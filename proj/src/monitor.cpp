#include "arbiter/monitor.hpp"

#include <algorithm>
#include <atomic>
#include <set>
#include <sstream>

namespace arbiter {

namespace {
constexpr uint64_t kFnvOffset = 0xcbf29ce484222325ull;
constexpr uint64_t kFnvPrime = 0x100000001b3ull;

uint64_t fnv_bytes(uint64_t h, const void* data, size_t n) {
  const uint8_t* p = static_cast<const uint8_t*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
  return h;
}

uint64_t fnv_u64(uint64_t h, uint64_t v) { return fnv_bytes(h, &v, 8); }

std::string id_namer_text(const Category& c) {
  return "c" + std::to_string(c.id);
}

// Claimed sender id inside a request payload, when the opcode carries one.
std::optional<uint32_t> claimed_from(const RequestBody& body) {
  struct Visitor {
    std::optional<uint32_t> operator()(const RegisterReq&) { return std::nullopt; }
    std::optional<uint32_t> operator()(const NullReq&) { return std::nullopt; }
    std::optional<uint32_t> operator()(const MallocReq& r) { return r.from; }
    std::optional<uint32_t> operator()(const FreeReq& r) { return r.from; }
    std::optional<uint32_t> operator()(const CallocReq& r) { return r.from; }
    std::optional<uint32_t> operator()(const ReallocReq& r) { return r.from; }
    std::optional<uint32_t> operator()(const MmapReq& r) { return r.from; }
    std::optional<uint32_t> operator()(const CreateCatReq& r) { return r.from; }
    std::optional<uint32_t> operator()(const GetLabelReq& r) { return r.from; }
    std::optional<uint32_t> operator()(const GetOwnReq& r) { return r.from; }
    std::optional<uint32_t> operator()(const GetMemLabelReq& r) { return r.from; }
    std::optional<uint32_t> operator()(const GetPrivReq& r) { return r.from; }
    std::optional<uint32_t> operator()(const ThrCreateReq& r) { return r.from; }
    std::optional<uint32_t> operator()(const ThrJoinReq& r) { return r.from; }
  };
  return std::visit(Visitor{}, body);
}

std::string hex_addr(uint32_t addr) {
  std::ostringstream out;
  out << "0x" << std::hex << addr;
  return out.str();
}

const char* status_name(Status s) {
  switch (s) {
    case Status::Ok: return "OK";
    case Status::Denied: return "DENIED";
    case Status::Malformed: return "MALFORMED";
    case Status::Error: return "ERROR";
  }
  return "?";
}
}  // namespace

const char* principal_status_name(PrincipalStatus s) {
  switch (s) {
    case PrincipalStatus::Running: return "running";
    case PrincipalStatus::Exited: return "exited";
    case PrincipalStatus::Terminated: return "terminated";
  }
  return "?";
}

uint32_t Group::next_group_id() {
  static std::atomic<uint32_t> counter{1};
  return counter.fetch_add(1) & 0x7fffffffu;
}

Group::Group()
    : group_id_(next_group_id()), alloc_(store_), prot_(store_, kArbiterId) {
  Principal arbiter;
  arbiter.id = kArbiterId;
  arbiter.ab_identity = arbiter_identity();
  principals_.emplace(kArbiterId, std::move(arbiter));
}

std::vector<uint8_t> Group::handle_frame(const Credential& cred,
                                         std::span<const uint8_t> frame) {
  DecodedRequest dec = decode_request(frame);
  if (!dec.ok) {
    std::lock_guard lock(mu_);
    arrivals_ += 1;
    counters_.requests += 1;
    counters_.malformed += 1;
    auto bound = conn_bindings_.find(cred.conn_id);
    int64_t from = bound == conn_bindings_.end() ? -1 : bound->second;
    audit_locked(from, "unknown", Status::Malformed, dec.reason);
    return encode_response(
        Response{Status::Malformed, dec.seq, ErrorResp{dec.reason}});
  }
  HandleResult result = handle_request(cred, dec.request);
  if (auto* resp = std::get_if<Response>(&result))
    return encode_response(*resp);
  return encode_response(std::get<std::shared_future<Response>>(result).get());
}

Group::HandleResult Group::handle_request(const Credential& cred,
                                          const Request& req) {
  bool deferred = false;
  std::shared_future<Response> fut;
  Response resp;
  {
    std::lock_guard lock(mu_);
    resp = dispatch_locked(cred, req, deferred, fut);
  }
  drain_entry_queue();
  if (deferred) return fut;
  return resp;
}

void Group::drain_entry_queue() {
  for (;;) {
    std::pair<uint32_t, std::string> item;
    {
      std::lock_guard lock(mu_);
      if (entry_queue_.empty() || !entry_cb_) return;
      item = std::move(entry_queue_.front());
      entry_queue_.pop_front();
    }
    entry_cb_(item.first, item.second);
  }
}

Response Group::dispatch_locked(const Credential& cred, const Request& req,
                                bool& deferred,
                                std::shared_future<Response>& fut) {
  arrivals_ += 1;
  counters_.requests += 1;
  const Opcode op = opcode_of(req.body);
  const char* name = op_name(op);
  auto bound = conn_bindings_.find(cred.conn_id);
  const int64_t from_audit =
      bound == conn_bindings_.end() ? -1 : bound->second;

  auto deny = [&](const std::string& why) {
    counters_.denied += 1;
    audit_locked(from_audit, name, Status::Denied, why);
    return Response{Status::Denied, req.seq, ErrorResp{why}};
  };
  auto fail = [&](const std::string& why) {
    counters_.errors += 1;
    audit_locked(from_audit, name, Status::Error, why);
    return Response{Status::Error, req.seq, ErrorResp{why}};
  };
  auto ok = [&](const std::string& detail, ResponseBody body) {
    counters_.ok += 1;
    audit_locked(from_audit, name, Status::Ok, detail);
    return Response{Status::Ok, req.seq, std::move(body)};
  };

  if (group_fatal_) return fail("group fatal: category counter exhausted");

  if (op == Opcode::Register)
    return do_register_locked(cred, std::get<RegisterReq>(req.body), req.seq);

  if (bound == conn_bindings_.end()) return deny("unregistered connection");
  Principal& p = principals_.at(bound->second);
  if (p.status != PrincipalStatus::Running)
    return deny("principal not running");
  if (auto claimed = claimed_from(req.body); claimed && *claimed != p.id)
    return deny("identity claim does not match connection credential");

  const CategoryNamer namer = id_namer_text;

  switch (op) {
    case Opcode::Malloc: {
      const auto& r = std::get<MallocReq>(req.body);
      if (!check_alloc(p.label, p.ownership, r.label))
        return deny("allocation label not reachable from principal");
      AllocResult a = alloc_.allocate(r.size, r.label);
      if (a.status == AllocStatus::ZeroSize) return fail("zero-size allocation");
      if (a.status == AllocStatus::OutOfAsms) return fail("segment exhausted");
      if (a.new_block) propagate_block_locked(*a.new_block);
      return ok("size=" + std::to_string(r.size) +
                    " label=" + format_label(r.label, namer) +
                    " addr=" + hex_addr(a.addr),
                AddrResp{a.addr});
    }
    case Opcode::Calloc: {
      const auto& r = std::get<CallocReq>(req.body);
      if (!check_alloc(p.label, p.ownership, r.label))
        return deny("allocation label not reachable from principal");
      AllocResult a = alloc_.allocate_zeroed(r.count, r.size, r.label);
      if (a.status == AllocStatus::ZeroSize) return fail("zero-size allocation");
      if (a.status == AllocStatus::Overflow) return fail("size overflow");
      if (a.status == AllocStatus::OutOfAsms) return fail("segment exhausted");
      if (a.new_block) propagate_block_locked(*a.new_block);
      return ok("count=" + std::to_string(r.count) +
                    " size=" + std::to_string(r.size) +
                    " label=" + format_label(r.label, namer) +
                    " addr=" + hex_addr(a.addr),
                AddrResp{a.addr});
    }
    case Opcode::Free: {
      const auto& r = std::get<FreeReq>(req.body);
      auto obj = alloc_.lookup_object(r.addr);
      if (!obj) return fail("unknown address");
      if (!perms_for(p.label, p.ownership, obj->label).write)
        return deny("no write permission on object");
      FreeResult f = alloc_.free_object(r.addr);
      if (f.freed_block) prot_.unmap_range(f.freed_block->range());
      return ok("addr=" + hex_addr(r.addr) +
                    (f.freed_block ? " block_unmapped" : ""),
                EmptyResp{});
    }
    case Opcode::Realloc: {
      const auto& r = std::get<ReallocReq>(req.body);
      auto obj = alloc_.lookup_object(r.addr);
      if (!obj) return fail("unknown address");
      if (!perms_for(p.label, p.ownership, obj->label).write)
        return deny("no write permission on object");
      ReallocResult res = alloc_.reallocate(r.addr, r.size);
      if (res.status == AllocStatus::ZeroSize) return fail("zero-size allocation");
      if (res.status == AllocStatus::OutOfAsms) return fail("segment exhausted");
      if (res.new_block) propagate_block_locked(*res.new_block);
      if (res.freed_block) prot_.unmap_range(res.freed_block->range());
      return ok("addr=" + hex_addr(r.addr) + " size=" + std::to_string(r.size) +
                    " new_addr=" + hex_addr(res.addr),
                AddrResp{res.addr});
    }
    case Opcode::Mmap: {
      const auto& r = std::get<MmapReq>(req.body);
      if (!check_alloc(p.label, p.ownership, r.label))
        return deny("allocation label not reachable from principal");
      AllocResult a = alloc_.map_region(r.length, r.label, r.fill);
      if (a.status == AllocStatus::ZeroSize) return fail("zero-length mapping");
      if (a.status == AllocStatus::Overflow) return fail("fill exceeds length");
      if (a.status == AllocStatus::OutOfAsms) return fail("segment exhausted");
      if (a.new_block) propagate_block_locked(*a.new_block);
      return ok("length=" + std::to_string(r.length) +
                    " label=" + format_label(r.label, namer) +
                    " addr=" + hex_addr(a.addr),
                AddrResp{a.addr});
    }
    case Opcode::CreateCat: {
      const auto& r = std::get<CreateCatReq>(req.body);
      auto cat = new_category(r.kind, category_counter_);
      if (!cat) {
        group_fatal_ = true;
        return fail("category counter exhausted (group fatal)");
      }
      // A fresh category cannot appear in any existing label, so growing
      // the creator's ownership here cannot change any existing decision.
      p.ownership.insert(*cat);
      return ok("id=" + std::to_string(cat->id) +
                    " kind=" +
                    (cat->kind == CategoryKind::Secrecy ? "secrecy"
                                                        : "integrity"),
                CreateCatResp{*cat});
    }
    case Opcode::GetLabel:
      return ok("", LabelResp{p.label});
    case Opcode::GetOwn:
      return ok("", OwnResp{p.ownership});
    case Opcode::GetMemLabel: {
      const auto& r = std::get<GetMemLabelReq>(req.body);
      auto obj = alloc_.lookup_object(r.addr);
      if (!obj) return fail("object not found");
      return ok("addr=" + hex_addr(r.addr) +
                    " label=" + format_label(obj->label, namer),
                MemLabelResp{obj->label, obj->size});
    }
    case Opcode::GetPriv: {
      const auto& r = std::get<GetPrivReq>(req.body);
      auto target = principals_.find(r.target);
      if (target == principals_.end() || r.target == kArbiterId)
        return fail("unknown principal");
      auto obj = alloc_.lookup_object(r.addr);
      if (!obj) return fail("object not found");
      Permission perm =
          perms_for(target->second.label, target->second.ownership, obj->label);
      return ok("target=" + std::to_string(r.target) +
                    " addr=" + hex_addr(r.addr) + " perm=" + perm_text(perm),
                PrivResp{perm});
    }
    case Opcode::ThrCreate: {
      const auto& r = std::get<ThrCreateReq>(req.body);
      Label child_label = r.label ? *r.label : p.label;
      Ownership child_own = r.ownership ? *r.ownership : p.ownership;
      if (child_label.is_unlabeled())
        return fail("principal label must be labeled");
      if (!check_create(p.label, p.ownership, child_label, child_own))
        return deny("thread creation violates flow or ownership containment");
      uint32_t child =
          add_principal_locked(child_label, child_own, p.id, r.entry);
      entry_queue_.emplace_back(child, r.entry);
      return ok("child=" + std::to_string(child) +
                    " label=" + format_label(child_label, namer),
                ThrCreateResp{child});
    }
    case Opcode::ThrJoin: {
      const auto& r = std::get<ThrJoinReq>(req.body);
      auto child = principals_.find(r.child);
      if (child == principals_.end() || r.child == kArbiterId ||
          r.child == p.id)
        return fail("unknown child");
      for (const PendingJoin& pj : pending_joins_)
        if (pj.child == r.child) return fail("already joined");
      if (child->second.joined) return fail("already joined");
      if (child->second.status == PrincipalStatus::Running) {
        PendingJoin pj;
        pj.child = r.child;
        pj.seq = req.seq;
        pj.future = pj.promise.get_future().share();
        fut = pj.future;
        deferred = true;
        pending_joins_.push_back(std::move(pj));
        counters_.ok += 1;
        audit_locked(from_audit, name, Status::Ok,
                     "child=" + std::to_string(r.child) + " deferred");
        return Response{};  // ignored by caller
      }
      child->second.joined = true;
      uint8_t kind =
          child->second.status == PrincipalStatus::Terminated ? 1 : 0;
      return ok("child=" + std::to_string(r.child) + " status=" +
                    principal_status_name(child->second.status),
                ThrJoinResp{kind});
    }
    case Opcode::NullOp:
      return ok("", EmptyResp{});
    case Opcode::Register:
      break;  // handled above
  }
  return fail("unhandled opcode");
}

Response Group::do_register_locked(const Credential& cred,
                                   const RegisterReq& r, uint32_t seq) {
  auto fail = [&](const std::string& why) {
    counters_.errors += 1;
    audit_locked(-1, op_name(Opcode::Register), Status::Error, why);
    return Response{Status::Error, seq, ErrorResp{why}};
  };
  if (conn_bindings_.contains(cred.conn_id))
    return fail("duplicate registration");
  if (r.label && r.label->is_unlabeled())
    return fail("principal label must be labeled");
  Label label = r.label.value_or(Label{});
  Ownership own = r.ownership.value_or(Ownership{});
  uint32_t id = add_principal_locked(label, own, std::nullopt, "");
  conn_bindings_[cred.conn_id] = id;
  counters_.ok += 1;
  audit_locked(id, op_name(Opcode::Register), Status::Ok,
               "id=" + std::to_string(id) +
                   " label=" + format_label(label, id_namer_text));
  return Response{Status::Ok, seq,
                  RegisterResp{id, principals_.at(id).ab_identity}};
}

uint32_t Group::add_principal_locked(const Label& label, const Ownership& own,
                                     std::optional<uint32_t> parent,
                                     std::string entry) {
  Principal p;
  p.id = next_principal_++;
  p.ab_identity = group_id_ << 1;  // member role bit = 0
  p.label = label;
  p.ownership = own;
  p.parent = parent;
  p.entry = std::move(entry);
  uint32_t id = p.id;
  principals_.emplace(id, std::move(p));
  member_order_.push_back(id);
  init_member_perms_locked(id);
  return id;
}

void Group::propagate_block_locked(const BlockInfo& block) {
  prot_.map_range(block.range());
  for (uint32_t id : member_order_) {
    const Principal& m = principals_.at(id);
    Permission perm = perms_for(m.label, m.ownership, block.label);
    prot_.set_page_perms(kArbiterId, id, block.range(), perm.read, perm.write);
  }
}

void Group::init_member_perms_locked(uint32_t id) {
  prot_.add_member(id);
  const Principal& m = principals_.at(id);
  for (const BlockInfo& b : alloc_.live_blocks()) {
    Permission perm = perms_for(m.label, m.ownership, b.label);
    prot_.set_page_perms(kArbiterId, id, b.range(), perm.read, perm.write);
  }
}

void Group::finish_member_locked(uint32_t id, PrincipalStatus status,
                                 int exit_status,
                                 std::optional<FaultEvent> fault) {
  auto it = principals_.find(id);
  if (it == principals_.end() || it->second.status != PrincipalStatus::Running)
    return;
  Principal& p = it->second;
  p.status = status;
  p.exit_status = exit_status;
  p.fault = fault;
  member_order_.erase(
      std::find(member_order_.begin(), member_order_.end(), id));
  prot_.remove_member(id);
  for (auto pj = pending_joins_.begin(); pj != pending_joins_.end();) {
    if (pj->child == id) {
      p.joined = true;
      uint8_t kind = status == PrincipalStatus::Terminated ? 1 : 0;
      pj->promise.set_value(
          Response{Status::Ok, pj->seq, ThrJoinResp{kind}});
      pj = pending_joins_.erase(pj);
    } else {
      ++pj;
    }
  }
}

bool Group::bind_credential(const Credential& cred, uint32_t principal) {
  std::lock_guard lock(mu_);
  if (conn_bindings_.contains(cred.conn_id)) return false;
  if (!principals_.contains(principal)) return false;
  conn_bindings_[cred.conn_id] = principal;
  return true;
}

void Group::connection_closed(const Credential& cred) {
  std::lock_guard lock(mu_);
  auto it = conn_bindings_.find(cred.conn_id);
  if (it == conn_bindings_.end()) return;
  uint32_t id = it->second;
  conn_bindings_.erase(it);
  finish_member_locked(id, PrincipalStatus::Exited, 0, std::nullopt);
}

void Group::member_exited(uint32_t id, int exit_status) {
  std::lock_guard lock(mu_);
  finish_member_locked(id, PrincipalStatus::Exited, exit_status, std::nullopt);
}

void Group::set_entry_callback(
    std::function<void(uint32_t, const std::string&)> cb) {
  std::lock_guard lock(mu_);
  entry_cb_ = std::move(cb);
}

AccessResult Group::member_read(uint32_t id, uint32_t addr, uint64_t len) {
  AccessResult r = prot_.read_mem(id, addr, len);
  if (r.outcome == AccessOutcome::Fault &&
      r.disposition == FaultDisposition::Terminated) {
    std::lock_guard lock(mu_);
    finish_member_locked(
        id, PrincipalStatus::Terminated, -1,
        FaultEvent{id, addr, AccessKind::Read, FaultDisposition::Terminated});
  }
  return r;
}

AccessResult Group::member_write(uint32_t id, uint32_t addr,
                                 std::span<const uint8_t> data) {
  AccessResult r = prot_.write_mem(id, addr, data);
  if (r.outcome == AccessOutcome::Fault &&
      r.disposition == FaultDisposition::Terminated) {
    std::lock_guard lock(mu_);
    finish_member_locked(
        id, PrincipalStatus::Terminated, -1,
        FaultEvent{id, addr, AccessKind::Write, FaultDisposition::Terminated});
  }
  return r;
}

std::optional<Principal> Group::principal_info(uint32_t id) const {
  std::lock_guard lock(mu_);
  auto it = principals_.find(id);
  if (it == principals_.end()) return std::nullopt;
  return it->second;
}

std::vector<uint32_t> Group::running_members() const {
  std::lock_guard lock(mu_);
  return member_order_;
}

GroupStats Group::stats() const {
  std::lock_guard lock(mu_);
  GroupStats s = counters_;
  s.perm_range_updates = prot_.perm_update_count();
  const AllocatorStats& a = alloc_.stats();
  s.blocks_created = a.blocks_created;
  s.blocks_recycled = a.blocks_recycled;
  s.blocks_revived = a.blocks_revived;
  s.large_unmapped = a.large_unmapped;
  s.faults = prot_.fault_count();
  s.live_blocks = alloc_.live_blocks().size();
  s.live_objects = alloc_.live_object_count();
  s.running_members = member_order_.size();
  return s;
}

void Group::audit_locked(int64_t from, const std::string& op, Status decision,
                         const std::string& detail) {
  std::ostringstream line;
  line << "REQ seq=" << arrivals_ << " from=" << from << " op=" << op
       << " decision=" << status_name(decision) << " detail=" << detail;
  audit_.push_back(line.str());
}

std::string Group::audit_text() const {
  std::lock_guard lock(mu_);
  std::string out;
  for (const std::string& line : audit_) {
    out += line;
    out += '\n';
  }
  return out;
}

uint64_t Group::audit_digest() const {
  std::lock_guard lock(mu_);
  uint64_t h = kFnvOffset;
  for (const std::string& line : audit_) {
    h = fnv_bytes(h, line.data(), line.size());
    h = fnv_bytes(h, "\n", 1);
  }
  return h;
}

std::string Group::dump_layout(const CategoryNamer& namer) const {
  std::lock_guard lock(mu_);
  return alloc_.dump_layout(namer);
}

bool Group::consistency_check(std::string* why) const {
  std::lock_guard lock(mu_);
  auto fail = [&](const std::string& msg) {
    if (why) *why = msg;
    return false;
  };
  auto tables = prot_.tables_copy();

  // Running members and permission tables must be the same set.
  std::set<uint32_t> running(member_order_.begin(), member_order_.end());
  if (tables.size() != running.size())
    return fail("table count != running member count");
  for (const auto& [id, table] : tables)
    if (!running.contains(id))
      return fail("table for non-running member " + std::to_string(id));

  // Coverage must be exactly the pages of live blocks, for every member.
  std::vector<BlockInfo> blocks = alloc_.live_blocks();
  std::set<uint32_t> expect_pages;
  for (const BlockInfo& b : blocks)
    for (uint32_t i = 0; i < b.pages; ++i)
      expect_pages.insert(b.range().first_page + i);
  std::vector<uint32_t> cov = prot_.coverage();
  if (!std::equal(cov.begin(), cov.end(), expect_pages.begin(),
                  expect_pages.end()) ||
      cov.size() != expect_pages.size())
    return fail("coverage differs from live block pages");
  for (const auto& [id, table] : tables) {
    if (table.size() != expect_pages.size())
      return fail("member " + std::to_string(id) + " coverage mismatch");
  }

  // Every table entry must be the image of the label algebra.
  for (const BlockInfo& b : blocks) {
    for (const auto& [id, table] : tables) {
      const Principal& m = principals_.at(id);
      Permission expect = perms_for(m.label, m.ownership, b.label);
      for (uint32_t i = 0; i < b.pages; ++i) {
        auto it = table.find(b.range().first_page + i);
        if (it == table.end())
          return fail("member " + std::to_string(id) + " missing page");
        if (it->second.read != expect.read || it->second.write != expect.write)
          return fail("member " + std::to_string(id) + " perm drift on block " +
                      hex_addr(b.start) + ": have " +
                      perm_text({it->second.read, it->second.write}) +
                      " want " + perm_text(expect));
      }
    }
  }
  return true;
}

uint64_t Group::state_digest() const {
  std::lock_guard lock(mu_);
  uint64_t h = kFnvOffset;
  h = fnv_u64(h, group_id_);
  h = fnv_u64(h, next_principal_);
  h = fnv_u64(h, category_counter_.next);
  for (const auto& [id, p] : principals_) {
    h = fnv_u64(h, id);
    h = fnv_u64(h, p.ab_identity);
    h = fnv_u64(h, static_cast<uint64_t>(p.status));
    h = fnv_u64(h, p.joined ? 1 : 0);
    if (!p.label.is_unlabeled())
      for (const Category& c : p.label.categories()) {
        h = fnv_u64(h, c.id);
        h = fnv_u64(h, static_cast<uint64_t>(c.kind));
      }
    h = fnv_u64(h, 0x5eb);
    for (const Category& c : p.ownership) {
      h = fnv_u64(h, c.id);
      h = fnv_u64(h, static_cast<uint64_t>(c.kind));
    }
  }
  std::string layout = alloc_.dump_layout(id_namer_text);
  h = fnv_bytes(h, layout.data(), layout.size());
  h = fnv_u64(h, alloc_.forward_cursor());
  h = fnv_u64(h, alloc_.backward_cursor());
  for (const auto& [addr, info] : alloc_.live_objects()) {
    h = fnv_u64(h, addr);
    h = fnv_u64(h, info.size);
  }
  h = fnv_u64(h, prot_.state_digest());
  h = fnv_u64(h, store_.content_digest());
  return h;
}

void Group::set_category_counter(uint64_t next) {
  std::lock_guard lock(mu_);
  category_counter_.next = next;
}

}  // namespace arbiter
