// Secure memory segment: geometry constants, the shared byte store, and the
// permission-oriented allocator that keeps every page single-label.
#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "arbiter/label.hpp"

namespace arbiter {

// The segment spans [kAsmsBase, kAsmsLimit): 512 MiB of 32-bit address
// space. Normal blocks grow forward from the base, large blocks backward
// from the limit.
inline constexpr uint32_t kAsmsBase = 0x8000'0000u;
inline constexpr uint32_t kAsmsLimit = 0xA000'0000u;
inline constexpr uint32_t kPageSize = 4096;
inline constexpr uint32_t kBlockPages = 16;
inline constexpr uint32_t kBlockBytes = kBlockPages * kPageSize;  // 64 KiB
inline constexpr uint32_t kChunkHeaderBytes = 16;
inline constexpr uint32_t kChunkAlign = 16;
// Largest request that still fits a normal block (one header + payload).
inline constexpr uint32_t kLargeThreshold = kBlockBytes - kChunkHeaderBytes;
inline constexpr uint32_t kAsmsPages = (kAsmsLimit - kAsmsBase) / kPageSize;

inline bool asms_contains(uint64_t addr, uint64_t len) {
  return addr >= kAsmsBase && addr + len <= kAsmsLimit;
}
inline uint32_t page_of(uint32_t addr) { return (addr - kAsmsBase) / kPageSize; }
inline uint32_t page_addr(uint32_t page) { return kAsmsBase + page * kPageSize; }

// One physical backing per group: every principal's accesses resolve to
// these bytes. Pages materialize on first write; reads of untouched pages
// see zeros.
class AsmsStore {
 public:
  void read(uint32_t addr, std::span<uint8_t> out) const;
  std::vector<uint8_t> read(uint32_t addr, size_t len) const;
  void write(uint32_t addr, std::span<const uint8_t> data);
  void zero(uint32_t addr, uint64_t len);

  // FNV digest of materialized content, for state-hash checks.
  uint64_t content_digest() const;

 private:
  using Page = std::array<uint8_t, kPageSize>;
  mutable std::mutex mu_;
  std::map<uint32_t, std::unique_ptr<Page>> pages_;  // page index -> bytes
};

enum class BlockKind : uint8_t { Normal, Large };

struct PageRange {
  uint32_t first_page = 0;
  uint32_t pages = 0;

  bool operator==(const PageRange&) const = default;
};

struct BlockInfo {
  uint32_t start = 0;  // page-aligned
  uint32_t pages = 0;
  BlockKind kind = BlockKind::Normal;
  Label label;
  uint32_t live_chunks = 0;

  PageRange range() const { return {page_of(start), pages}; }
};

enum class AllocStatus : uint8_t {
  Ok,
  ZeroSize,
  Overflow,
  OutOfAsms,
  UnknownAddress,
};

struct AllocResult {
  AllocStatus status = AllocStatus::Ok;
  uint32_t addr = 0;  // payload address, 16-byte aligned
  // Present when a block was created or revived; the monitor must map the
  // range and propagate permissions before handing out the address.
  std::optional<BlockInfo> new_block;
};

struct FreeResult {
  AllocStatus status = AllocStatus::Ok;
  // Present when the containing block became fully free (or was large) and
  // was removed; the monitor must unmap the range group-wide.
  std::optional<BlockInfo> freed_block;
};

struct ReallocResult {
  AllocStatus status = AllocStatus::Ok;
  uint32_t addr = 0;
  std::optional<BlockInfo> new_block;
  std::optional<BlockInfo> freed_block;
};

struct ObjectInfo {
  Label label;
  uint64_t size = 0;  // requested size of the live allocation
};

struct AllocatorStats {
  uint64_t blocks_created = 0;
  uint64_t blocks_recycled = 0;  // normal blocks parked for reuse
  uint64_t blocks_revived = 0;   // recycled blocks put back in service
  uint64_t large_unmapped = 0;
};

// Permission-oriented allocator. Objects with identical labels share
// blocks (16 pages each); anything larger than a block's payload, and
// every mapped region, gets a dedicated large block carved backward from
// the segment limit. Chunk management is first-fit over per-block free
// lists with 16-byte headers, lowest address first; freed normal blocks
// park on a per-label recycle list and are revived before the forward
// cursor grows.
class AsmsAllocator {
 public:
  explicit AsmsAllocator(AsmsStore& store) : store_(store) {}

  AllocResult allocate(uint64_t size, const Label& label);
  AllocResult allocate_zeroed(uint64_t count, uint64_t size,
                              const Label& label);
  // Page-granular labeled mapping: always a large block, payload filled
  // with `fill` then zeros. Freed with free_object like any allocation.
  AllocResult map_region(uint64_t length, const Label& label,
                         std::span<const uint8_t> fill);
  ReallocResult reallocate(uint32_t addr, uint64_t new_size);
  FreeResult free_object(uint32_t addr);

  std::optional<ObjectInfo> lookup_object(uint32_t addr) const;

  uint32_t forward_cursor() const { return fwd_cursor_; }
  uint32_t backward_cursor() const { return bwd_cursor_; }
  std::vector<BlockInfo> live_blocks() const;  // address order
  size_t live_object_count() const { return objects_.size(); }
  // (payload addr, info) pairs in address order.
  std::vector<std::pair<uint32_t, ObjectInfo>> live_objects() const;
  uint64_t total_free_bytes() const;
  const AllocatorStats& stats() const { return stats_; }

  // One line per live block: `kind start pages label live_chunks`.
  void dump_layout(std::ostream& out, const CategoryNamer& namer) const;
  std::string dump_layout(const CategoryNamer& namer) const;

 private:
  struct Block {
    uint32_t start = 0;
    uint32_t pages = 0;
    BlockKind kind = BlockKind::Normal;
    Label label;
    std::map<uint32_t, uint32_t> free_chunks;  // header addr -> capacity
    std::map<uint32_t, uint32_t> used_chunks;  // header addr -> capacity
    uint64_t free_bytes = 0;

    uint32_t live_chunks() const {
      return static_cast<uint32_t>(used_chunks.size());
    }
    BlockInfo info() const {
      return {start, pages, kind, label, live_chunks()};
    }
  };

  struct ObjectEntry {
    uint32_t block_start = 0;
    uint64_t size = 0;
  };

  static uint32_t round_chunk(uint64_t size);

  Block* find_block(uint32_t start);
  AllocResult alloc_normal(uint64_t size, const Label& label);
  AllocResult alloc_large(uint64_t size, const Label& label);
  uint32_t carve_chunk(Block& b, uint32_t header_addr, uint32_t capacity,
                       uint32_t need, uint64_t logical_size);
  void write_chunk_header(uint32_t header_addr, uint32_t capacity,
                          bool in_use);
  void release_chunk(Block& b, uint32_t header_addr);

  AsmsStore& store_;
  uint32_t fwd_cursor_ = kAsmsBase;
  uint32_t bwd_cursor_ = kAsmsLimit;
  std::map<uint32_t, Block> blocks_;  // live blocks by start address
  // Active and parked normal blocks per label, kept sorted by address.
  std::unordered_map<Label, std::vector<uint32_t>, LabelHash> label_blocks_;
  std::unordered_map<Label, std::vector<uint32_t>, LabelHash> recycle_;
  std::map<uint32_t, uint32_t> free_large_;  // start addr -> pages
  std::unordered_map<uint32_t, ObjectEntry> objects_;  // payload addr -> entry
  AllocatorStats stats_;
};

}  // namespace arbiter
