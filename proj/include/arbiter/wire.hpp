// Framed request/response codec. Frames are length-prefixed with
// little-endian fixed-width integers throughout; the byte-level contract
// is documented in docs/wire.md.
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "arbiter/label.hpp"

namespace arbiter {

enum class Opcode : uint8_t {
  Register = 0x01,
  Malloc = 0x02,
  Free = 0x03,
  Calloc = 0x04,
  Realloc = 0x05,
  Mmap = 0x06,
  CreateCat = 0x07,
  GetLabel = 0x08,
  GetOwn = 0x09,
  GetMemLabel = 0x0A,
  GetPriv = 0x0B,
  ThrCreate = 0x0C,
  ThrJoin = 0x0D,
  NullOp = 0x0E,
};

enum class Status : uint8_t {
  Ok = 0,
  Denied = 1,
  Malformed = 2,
  Error = 3,
};

// Request payloads. `from` is the sender's claimed principal id; the
// monitor cross-checks it against the connection's credential (a forged
// claim is an authentication failure). REGISTER and NULL_OP carry none.
struct RegisterReq {
  std::optional<Label> label;       // absent: inherit / default
  std::optional<Ownership> ownership;
};
struct MallocReq {
  uint32_t from = 0;
  uint64_t size = 0;
  Label label;
};
struct FreeReq {
  uint32_t from = 0;
  uint32_t addr = 0;
};
struct CallocReq {
  uint32_t from = 0;
  uint64_t count = 0;
  uint64_t size = 0;
  Label label;
};
struct ReallocReq {
  uint32_t from = 0;
  uint32_t addr = 0;
  uint64_t size = 0;
};
struct MmapReq {
  uint32_t from = 0;
  uint64_t length = 0;
  Label label;
  std::vector<uint8_t> fill;  // file bytes; empty for anonymous (zeros)
};
struct CreateCatReq {
  uint32_t from = 0;
  CategoryKind kind = CategoryKind::Secrecy;
};
struct GetLabelReq {
  uint32_t from = 0;
};
struct GetOwnReq {
  uint32_t from = 0;
};
struct GetMemLabelReq {
  uint32_t from = 0;
  uint32_t addr = 0;
};
struct GetPrivReq {
  uint32_t from = 0;
  uint32_t target = 0;
  uint32_t addr = 0;
};
struct ThrCreateReq {
  uint32_t from = 0;
  std::optional<Label> label;          // absent: parent's
  std::optional<Ownership> ownership;  // absent: parent's
  std::string entry;
};
struct ThrJoinReq {
  uint32_t from = 0;
  uint32_t child = 0;
};
struct NullReq {};

using RequestBody =
    std::variant<RegisterReq, MallocReq, FreeReq, CallocReq, ReallocReq,
                 MmapReq, CreateCatReq, GetLabelReq, GetOwnReq, GetMemLabelReq,
                 GetPrivReq, ThrCreateReq, ThrJoinReq, NullReq>;

struct Request {
  uint32_t seq = 0;
  RequestBody body;
};

// Response payloads, by request opcode. Non-OK responses carry ErrorResp.
struct RegisterResp {
  uint32_t principal = 0;
  uint32_t identity = 0;
};
struct AddrResp {
  uint32_t addr = 0;
};
struct EmptyResp {};
struct CreateCatResp {
  Category category;
};
struct LabelResp {
  Label label;
};
struct OwnResp {
  Ownership ownership;
};
struct MemLabelResp {
  Label label;
  uint64_t size = 0;
};
struct PrivResp {
  Permission perm;
};
struct ThrCreateResp {
  uint32_t child = 0;
};
struct ThrJoinResp {
  uint8_t exit_kind = 0;  // 0 = exited, 1 = terminated by fault
};
struct ErrorResp {
  std::string detail;
};

using ResponseBody =
    std::variant<RegisterResp, AddrResp, EmptyResp, CreateCatResp, LabelResp,
                 OwnResp, MemLabelResp, PrivResp, ThrCreateResp, ThrJoinResp,
                 ErrorResp>;

struct Response {
  Status status = Status::Ok;
  uint32_t seq = 0;
  ResponseBody body;
};

Opcode opcode_of(const RequestBody& body);
const char* op_name(Opcode op);
std::optional<Opcode> op_by_name(const std::string& name);

std::vector<uint8_t> encode_request(const Request& req);

struct DecodedRequest {
  bool ok = false;
  Request request;        // valid when ok
  uint32_t seq = 0;       // best-effort echo for malformed frames
  std::string reason;     // when !ok
};
// Total: any byte string yields either a request or a malformed verdict.
DecodedRequest decode_request(std::span<const uint8_t> frame);

std::vector<uint8_t> encode_response(const Response& resp);

struct DecodedResponse {
  bool ok = false;
  Response response;
  std::string reason;
};
// Payload shape depends on the request's opcode; total for any input.
DecodedResponse decode_response(std::span<const uint8_t> frame, Opcode op);

}  // namespace arbiter
