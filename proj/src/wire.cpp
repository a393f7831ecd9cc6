#include "arbiter/wire.hpp"

#include <cstring>

namespace arbiter {

namespace {

// Guards against absurd allocations when decoding hostile input.
constexpr uint32_t kMaxFrameBytes = 16u << 20;
constexpr uint32_t kMaxSetEntries = 4096;
constexpr uint32_t kMaxBlobBytes = 16u << 20;

class Writer {
 public:
  void u8(uint8_t v) { out_.push_back(v); }
  void u32(uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<uint8_t>(v >> (i * 8)));
  }
  void u64(uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<uint8_t>(v >> (i * 8)));
  }
  void bytes(std::span<const uint8_t> b) {
    out_.insert(out_.end(), b.begin(), b.end());
  }
  void blob(std::span<const uint8_t> b) {
    u32(static_cast<uint32_t>(b.size()));
    bytes(b);
  }
  void str(const std::string& s) {
    blob({reinterpret_cast<const uint8_t*>(s.data()), s.size()});
  }
  void set(const CategorySet& s) {
    u32(static_cast<uint32_t>(s.size()));
    for (const Category& c : s) {
      u64(c.id);
      u8(static_cast<uint8_t>(c.kind));
    }
  }
  void label(const Label& l) {
    if (l.is_unlabeled()) {
      u8(0);
    } else {
      u8(1);
      set(l.categories());
    }
  }
  void opt_label(const std::optional<Label>& l) {
    u8(l.has_value() ? 1 : 0);
    if (l) label(*l);
  }
  void opt_set(const std::optional<CategorySet>& s) {
    u8(s.has_value() ? 1 : 0);
    if (s) set(*s);
  }
  std::vector<uint8_t> take() { return std::move(out_); }

 private:
  std::vector<uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const uint8_t> data) : data_(data) {}

  bool failed() const { return failed_; }
  bool done() const { return pos_ == data_.size(); }

  uint8_t u8() {
    if (!need(1)) return 0;
    return data_[pos_++];
  }
  uint32_t u32() {
    if (!need(4)) return 0;
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t{data_[pos_ + i]} << (i * 8);
    pos_ += 4;
    return v;
  }
  uint64_t u64() {
    if (!need(8)) return 0;
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t{data_[pos_ + i]} << (i * 8);
    pos_ += 8;
    return v;
  }
  std::vector<uint8_t> blob() {
    uint32_t n = u32();
    if (failed_ || n > kMaxBlobBytes || !need(n)) {
      failed_ = true;
      return {};
    }
    std::vector<uint8_t> out(data_.begin() + pos_, data_.begin() + pos_ + n);
    pos_ += n;
    return out;
  }
  std::string str() {
    auto b = blob();
    return {b.begin(), b.end()};
  }
  CategorySet set() {
    uint32_t n = u32();
    if (failed_ || n > kMaxSetEntries) {
      failed_ = true;
      return {};
    }
    std::vector<Category> cats;
    cats.reserve(n);
    for (uint32_t i = 0; i < n && !failed_; ++i) {
      uint64_t id = u64();
      uint8_t kind = u8();
      if (kind > 1) {
        failed_ = true;
        break;
      }
      cats.push_back({id, static_cast<CategoryKind>(kind)});
    }
    return CategorySet(std::move(cats));
  }
  Label label() {
    uint8_t tag = u8();
    if (failed_ || tag > 1) {
      failed_ = true;
      return Label::unlabeled();
    }
    if (tag == 0) return Label::unlabeled();
    return Label(set());
  }
  std::optional<Label> opt_label() {
    uint8_t tag = u8();
    if (failed_ || tag > 1) {
      failed_ = true;
      return std::nullopt;
    }
    if (tag == 0) return std::nullopt;
    return label();
  }
  std::optional<CategorySet> opt_set() {
    uint8_t tag = u8();
    if (failed_ || tag > 1) {
      failed_ = true;
      return std::nullopt;
    }
    if (tag == 0) return std::nullopt;
    return set();
  }

 private:
  bool need(size_t n) {
    if (failed_ || data_.size() - pos_ < n) {
      failed_ = true;
      return false;
    }
    return true;
  }
  std::span<const uint8_t> data_;
  size_t pos_ = 0;
  bool failed_ = false;
};

void encode_body(Writer& w, const RequestBody& body) {
  std::visit(
      [&](const auto& r) {
        using T = std::decay_t<decltype(r)>;
        if constexpr (std::is_same_v<T, RegisterReq>) {
          w.opt_label(r.label);
          w.opt_set(r.ownership);
        } else if constexpr (std::is_same_v<T, MallocReq>) {
          w.u32(r.from);
          w.u64(r.size);
          w.label(r.label);
        } else if constexpr (std::is_same_v<T, FreeReq>) {
          w.u32(r.from);
          w.u32(r.addr);
        } else if constexpr (std::is_same_v<T, CallocReq>) {
          w.u32(r.from);
          w.u64(r.count);
          w.u64(r.size);
          w.label(r.label);
        } else if constexpr (std::is_same_v<T, ReallocReq>) {
          w.u32(r.from);
          w.u32(r.addr);
          w.u64(r.size);
        } else if constexpr (std::is_same_v<T, MmapReq>) {
          w.u32(r.from);
          w.u64(r.length);
          w.label(r.label);
          w.blob(r.fill);
        } else if constexpr (std::is_same_v<T, CreateCatReq>) {
          w.u32(r.from);
          w.u8(static_cast<uint8_t>(r.kind));
        } else if constexpr (std::is_same_v<T, GetLabelReq>) {
          w.u32(r.from);
        } else if constexpr (std::is_same_v<T, GetOwnReq>) {
          w.u32(r.from);
        } else if constexpr (std::is_same_v<T, GetMemLabelReq>) {
          w.u32(r.from);
          w.u32(r.addr);
        } else if constexpr (std::is_same_v<T, GetPrivReq>) {
          w.u32(r.from);
          w.u32(r.target);
          w.u32(r.addr);
        } else if constexpr (std::is_same_v<T, ThrCreateReq>) {
          w.u32(r.from);
          w.opt_label(r.label);
          w.opt_set(r.ownership);
          w.str(r.entry);
        } else if constexpr (std::is_same_v<T, ThrJoinReq>) {
          w.u32(r.from);
          w.u32(r.child);
        } else if constexpr (std::is_same_v<T, NullReq>) {
          // empty payload
        }
      },
      body);
}

std::optional<RequestBody> decode_body(Reader& r, Opcode op) {
  switch (op) {
    case Opcode::Register: {
      RegisterReq q;
      q.label = r.opt_label();
      q.ownership = r.opt_set();
      return q;
    }
    case Opcode::Malloc: {
      MallocReq q;
      q.from = r.u32();
      q.size = r.u64();
      q.label = r.label();
      return q;
    }
    case Opcode::Free: {
      FreeReq q;
      q.from = r.u32();
      q.addr = r.u32();
      return q;
    }
    case Opcode::Calloc: {
      CallocReq q;
      q.from = r.u32();
      q.count = r.u64();
      q.size = r.u64();
      q.label = r.label();
      return q;
    }
    case Opcode::Realloc: {
      ReallocReq q;
      q.from = r.u32();
      q.addr = r.u32();
      q.size = r.u64();
      return q;
    }
    case Opcode::Mmap: {
      MmapReq q;
      q.from = r.u32();
      q.length = r.u64();
      q.label = r.label();
      q.fill = r.blob();
      return q;
    }
    case Opcode::CreateCat: {
      CreateCatReq q;
      q.from = r.u32();
      uint8_t k = r.u8();
      if (k > 1) return std::nullopt;
      q.kind = static_cast<CategoryKind>(k);
      return q;
    }
    case Opcode::GetLabel: {
      GetLabelReq q;
      q.from = r.u32();
      return q;
    }
    case Opcode::GetOwn: {
      GetOwnReq q;
      q.from = r.u32();
      return q;
    }
    case Opcode::GetMemLabel: {
      GetMemLabelReq q;
      q.from = r.u32();
      q.addr = r.u32();
      return q;
    }
    case Opcode::GetPriv: {
      GetPrivReq q;
      q.from = r.u32();
      q.target = r.u32();
      q.addr = r.u32();
      return q;
    }
    case Opcode::ThrCreate: {
      ThrCreateReq q;
      q.from = r.u32();
      q.label = r.opt_label();
      q.ownership = r.opt_set();
      q.entry = r.str();
      return q;
    }
    case Opcode::ThrJoin: {
      ThrJoinReq q;
      q.from = r.u32();
      q.child = r.u32();
      return q;
    }
    case Opcode::NullOp:
      return NullReq{};
  }
  return std::nullopt;
}

}  // namespace

Opcode opcode_of(const RequestBody& body) {
  struct Visitor {
    Opcode operator()(const RegisterReq&) { return Opcode::Register; }
    Opcode operator()(const MallocReq&) { return Opcode::Malloc; }
    Opcode operator()(const FreeReq&) { return Opcode::Free; }
    Opcode operator()(const CallocReq&) { return Opcode::Calloc; }
    Opcode operator()(const ReallocReq&) { return Opcode::Realloc; }
    Opcode operator()(const MmapReq&) { return Opcode::Mmap; }
    Opcode operator()(const CreateCatReq&) { return Opcode::CreateCat; }
    Opcode operator()(const GetLabelReq&) { return Opcode::GetLabel; }
    Opcode operator()(const GetOwnReq&) { return Opcode::GetOwn; }
    Opcode operator()(const GetMemLabelReq&) { return Opcode::GetMemLabel; }
    Opcode operator()(const GetPrivReq&) { return Opcode::GetPriv; }
    Opcode operator()(const ThrCreateReq&) { return Opcode::ThrCreate; }
    Opcode operator()(const ThrJoinReq&) { return Opcode::ThrJoin; }
    Opcode operator()(const NullReq&) { return Opcode::NullOp; }
  };
  return std::visit(Visitor{}, body);
}

const char* op_name(Opcode op) {
  switch (op) {
    case Opcode::Register: return "ab_register";
    case Opcode::Malloc: return "ab_malloc";
    case Opcode::Free: return "ab_free";
    case Opcode::Calloc: return "ab_calloc";
    case Opcode::Realloc: return "ab_realloc";
    case Opcode::Mmap: return "ab_mmap";
    case Opcode::CreateCat: return "create_category";
    case Opcode::GetLabel: return "get_label";
    case Opcode::GetOwn: return "get_ownership";
    case Opcode::GetMemLabel: return "get_mem_label";
    case Opcode::GetPriv: return "get_privilege";
    case Opcode::ThrCreate: return "ab_pthread_create";
    case Opcode::ThrJoin: return "ab_pthread_join";
    case Opcode::NullOp: return "ab_null";
  }
  return "unknown";
}

std::optional<Opcode> op_by_name(const std::string& name) {
  for (uint8_t v = 0x01; v <= 0x0E; ++v) {
    Opcode op = static_cast<Opcode>(v);
    if (name == op_name(op)) return op;
  }
  return std::nullopt;
}

std::vector<uint8_t> encode_request(const Request& req) {
  Writer payload;
  encode_body(payload, req.body);
  std::vector<uint8_t> body = payload.take();

  Writer frame;
  frame.u32(static_cast<uint32_t>(1 + 4 + body.size()));
  frame.u8(static_cast<uint8_t>(opcode_of(req.body)));
  frame.u32(req.seq);
  frame.bytes(body);
  return frame.take();
}

DecodedRequest decode_request(std::span<const uint8_t> frame) {
  DecodedRequest out;
  if (frame.size() < 9) {
    out.reason = "short frame";
    return out;
  }
  Reader header(frame);
  uint32_t length = header.u32();
  uint8_t op_raw = header.u8();
  uint32_t seq = header.u32();
  out.seq = seq;
  if (length > kMaxFrameBytes || uint64_t{length} + 4 != frame.size()) {
    out.reason = "length mismatch";
    return out;
  }
  if (op_raw < 0x01 || op_raw > 0x0E) {
    out.reason = "unknown opcode";
    return out;
  }
  Reader payload(frame.subspan(9));
  auto body = decode_body(payload, static_cast<Opcode>(op_raw));
  if (!body || payload.failed() || !payload.done()) {
    out.reason = "bad payload";
    return out;
  }
  out.ok = true;
  out.request = Request{seq, std::move(*body)};
  return out;
}

std::vector<uint8_t> encode_response(const Response& resp) {
  Writer payload;
  std::visit(
      [&](const auto& b) {
        using T = std::decay_t<decltype(b)>;
        if constexpr (std::is_same_v<T, RegisterResp>) {
          payload.u32(b.principal);
          payload.u32(b.identity);
        } else if constexpr (std::is_same_v<T, AddrResp>) {
          payload.u32(b.addr);
        } else if constexpr (std::is_same_v<T, EmptyResp>) {
        } else if constexpr (std::is_same_v<T, CreateCatResp>) {
          payload.u64(b.category.id);
          payload.u8(static_cast<uint8_t>(b.category.kind));
        } else if constexpr (std::is_same_v<T, LabelResp>) {
          payload.label(b.label);
        } else if constexpr (std::is_same_v<T, OwnResp>) {
          payload.set(b.ownership);
        } else if constexpr (std::is_same_v<T, MemLabelResp>) {
          payload.label(b.label);
          payload.u64(b.size);
        } else if constexpr (std::is_same_v<T, PrivResp>) {
          payload.u8((b.perm.read ? 1 : 0) | (b.perm.write ? 2 : 0));
        } else if constexpr (std::is_same_v<T, ThrCreateResp>) {
          payload.u32(b.child);
        } else if constexpr (std::is_same_v<T, ThrJoinResp>) {
          payload.u8(b.exit_kind);
        } else if constexpr (std::is_same_v<T, ErrorResp>) {
          payload.str(b.detail);
        }
      },
      resp.body);
  std::vector<uint8_t> body = payload.take();

  Writer frame;
  frame.u32(static_cast<uint32_t>(1 + 4 + body.size()));
  frame.u8(static_cast<uint8_t>(resp.status));
  frame.u32(resp.seq);
  frame.bytes(body);
  return frame.take();
}

DecodedResponse decode_response(std::span<const uint8_t> frame, Opcode op) {
  DecodedResponse out;
  if (frame.size() < 9) {
    out.reason = "short frame";
    return out;
  }
  Reader header(frame);
  uint32_t length = header.u32();
  uint8_t status_raw = header.u8();
  uint32_t seq = header.u32();
  if (length > kMaxFrameBytes || uint64_t{length} + 4 != frame.size()) {
    out.reason = "length mismatch";
    return out;
  }
  if (status_raw > 3) {
    out.reason = "bad status";
    return out;
  }
  Status status = static_cast<Status>(status_raw);
  Reader payload(frame.subspan(9));
  ResponseBody body;
  if (status != Status::Ok) {
    ErrorResp e;
    e.detail = payload.str();
    body = std::move(e);
  } else {
    switch (op) {
      case Opcode::Register: {
        RegisterResp b;
        b.principal = payload.u32();
        b.identity = payload.u32();
        body = b;
        break;
      }
      case Opcode::Malloc:
      case Opcode::Calloc:
      case Opcode::Realloc:
      case Opcode::Mmap: {
        AddrResp b;
        b.addr = payload.u32();
        body = b;
        break;
      }
      case Opcode::Free:
      case Opcode::NullOp:
        body = EmptyResp{};
        break;
      case Opcode::CreateCat: {
        CreateCatResp b;
        b.category.id = payload.u64();
        uint8_t k = payload.u8();
        if (k > 1) {
          out.reason = "bad category kind";
          return out;
        }
        b.category.kind = static_cast<CategoryKind>(k);
        body = b;
        break;
      }
      case Opcode::GetLabel: {
        LabelResp b;
        b.label = payload.label();
        body = b;
        break;
      }
      case Opcode::GetOwn: {
        OwnResp b;
        b.ownership = payload.set();
        body = b;
        break;
      }
      case Opcode::GetMemLabel: {
        MemLabelResp b;
        b.label = payload.label();
        b.size = payload.u64();
        body = b;
        break;
      }
      case Opcode::GetPriv: {
        PrivResp b;
        uint8_t bits = payload.u8();
        if (bits > 3) {
          out.reason = "bad perm bits";
          return out;
        }
        b.perm = Permission{(bits & 1) != 0, (bits & 2) != 0};
        body = b;
        break;
      }
      case Opcode::ThrCreate: {
        ThrCreateResp b;
        b.child = payload.u32();
        body = b;
        break;
      }
      case Opcode::ThrJoin: {
        ThrJoinResp b;
        b.exit_kind = payload.u8();
        if (b.exit_kind > 1) {
          out.reason = "bad exit kind";
          return out;
        }
        body = b;
        break;
      }
    }
  }
  if (payload.failed() || !payload.done()) {
    out.reason = "bad payload";
    return out;
  }
  out.ok = true;
  out.response = Response{status, seq, std::move(body)};
  return out;
}

}  // namespace arbiter
