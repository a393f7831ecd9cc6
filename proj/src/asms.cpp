#include "arbiter/asms.hpp"

#include <algorithm>
#include <cstring>
#include <sstream>

namespace arbiter {

namespace {
constexpr uint64_t kFnvOffset = 0xcbf29ce484222325ull;
constexpr uint64_t kFnvPrime = 0x100000001b3ull;
}  // namespace

void AsmsStore::read(uint32_t addr, std::span<uint8_t> out) const {
  std::lock_guard lock(mu_);
  size_t done = 0;
  while (done < out.size()) {
    uint32_t cur = addr + static_cast<uint32_t>(done);
    uint32_t page = page_of(cur);
    uint32_t off = (cur - kAsmsBase) % kPageSize;
    size_t n = std::min<size_t>(out.size() - done, kPageSize - off);
    auto it = pages_.find(page);
    if (it == pages_.end()) {
      std::memset(out.data() + done, 0, n);
    } else {
      std::memcpy(out.data() + done, it->second->data() + off, n);
    }
    done += n;
  }
}

std::vector<uint8_t> AsmsStore::read(uint32_t addr, size_t len) const {
  std::vector<uint8_t> out(len);
  read(addr, std::span<uint8_t>(out));
  return out;
}

void AsmsStore::write(uint32_t addr, std::span<const uint8_t> data) {
  std::lock_guard lock(mu_);
  size_t done = 0;
  while (done < data.size()) {
    uint32_t cur = addr + static_cast<uint32_t>(done);
    uint32_t page = page_of(cur);
    uint32_t off = (cur - kAsmsBase) % kPageSize;
    size_t n = std::min<size_t>(data.size() - done, kPageSize - off);
    auto& slot = pages_[page];
    if (!slot) {
      slot = std::make_unique<Page>();
      slot->fill(0);
    }
    std::memcpy(slot->data() + off, data.data() + done, n);
    done += n;
  }
}

void AsmsStore::zero(uint32_t addr, uint64_t len) {
  std::lock_guard lock(mu_);
  uint64_t done = 0;
  while (done < len) {
    uint32_t cur = addr + static_cast<uint32_t>(done);
    uint32_t page = page_of(cur);
    uint32_t off = (cur - kAsmsBase) % kPageSize;
    uint64_t n = std::min<uint64_t>(len - done, kPageSize - off);
    auto it = pages_.find(page);
    if (it != pages_.end()) {
      std::memset(it->second->data() + off, 0, static_cast<size_t>(n));
    }
    done += n;  // untouched pages already read as zero
  }
}

uint64_t AsmsStore::content_digest() const {
  std::lock_guard lock(mu_);
  uint64_t h = kFnvOffset;
  for (const auto& [page, bytes] : pages_) {
    h ^= page;
    h *= kFnvPrime;
    for (uint8_t b : *bytes) {
      h ^= b;
      h *= kFnvPrime;
    }
  }
  return h;
}

uint32_t AsmsAllocator::round_chunk(uint64_t size) {
  return static_cast<uint32_t>((size + kChunkAlign - 1) & ~uint64_t{kChunkAlign - 1});
}

AsmsAllocator::Block* AsmsAllocator::find_block(uint32_t start) {
  auto it = blocks_.find(start);
  return it == blocks_.end() ? nullptr : &it->second;
}

void AsmsAllocator::write_chunk_header(uint32_t header_addr, uint32_t capacity,
                                       bool in_use) {
  // 16 bytes: capacity (u64 LE) + in-use flag, mirroring the metadata the
  // allocator keeps on the side.
  uint8_t hdr[kChunkHeaderBytes] = {};
  uint64_t cap = capacity;
  for (int i = 0; i < 8; ++i) hdr[i] = static_cast<uint8_t>(cap >> (i * 8));
  hdr[8] = in_use ? 1 : 0;
  store_.write(header_addr, hdr);
}

uint32_t AsmsAllocator::carve_chunk(Block& b, uint32_t header_addr,
                                    uint32_t capacity, uint32_t need,
                                    uint64_t logical_size) {
  b.free_chunks.erase(header_addr);
  b.free_bytes -= capacity;
  uint32_t used_cap = capacity;
  if (capacity >= need + kChunkHeaderBytes + kChunkAlign) {
    // Split: remainder becomes a new free chunk.
    used_cap = need;
    uint32_t rem_header = header_addr + kChunkHeaderBytes + need;
    uint32_t rem_cap = capacity - need - kChunkHeaderBytes;
    b.free_chunks.emplace(rem_header, rem_cap);
    b.free_bytes += rem_cap;
    write_chunk_header(rem_header, rem_cap, false);
  }
  b.used_chunks.emplace(header_addr, used_cap);
  write_chunk_header(header_addr, used_cap, true);
  uint32_t payload = header_addr + kChunkHeaderBytes;
  objects_.emplace(payload, ObjectEntry{b.start, logical_size});
  return payload;
}

AllocResult AsmsAllocator::allocate(uint64_t size, const Label& label) {
  if (size == 0) return {AllocStatus::ZeroSize};
  if (size > kLargeThreshold) return alloc_large(size, label);
  return alloc_normal(size, label);
}

AllocResult AsmsAllocator::alloc_normal(uint64_t size, const Label& label) {
  uint32_t need = round_chunk(size);
  // First fit across this label's blocks, lowest address first.
  for (uint32_t start : label_blocks_[label]) {
    Block* b = find_block(start);
    for (const auto& [hdr, cap] : b->free_chunks) {
      if (cap >= need) {
        return {AllocStatus::Ok, carve_chunk(*b, hdr, cap, need, size),
                std::nullopt};
      }
    }
  }
  // No room: revive a recycled block for this label, else grow the cursor.
  uint32_t start = 0;
  auto rec = recycle_.find(label);
  if (rec != recycle_.end() && !rec->second.empty()) {
    start = rec->second.front();
    rec->second.erase(rec->second.begin());
    stats_.blocks_revived += 1;
  } else {
    if (uint64_t{fwd_cursor_} + kBlockBytes > bwd_cursor_)
      return {AllocStatus::OutOfAsms};
    start = fwd_cursor_;
    fwd_cursor_ += kBlockBytes;
    store_.zero(start, kBlockBytes);  // fresh mapping reads as zeros
    stats_.blocks_created += 1;
  }
  Block b;
  b.start = start;
  b.pages = kBlockPages;
  b.kind = BlockKind::Normal;
  b.label = label;
  b.free_chunks.emplace(start, kBlockBytes - kChunkHeaderBytes);
  b.free_bytes = kBlockBytes - kChunkHeaderBytes;
  write_chunk_header(start, kBlockBytes - kChunkHeaderBytes, false);
  auto [it, inserted] = blocks_.emplace(start, std::move(b));
  auto& vec = label_blocks_[label];
  vec.insert(std::upper_bound(vec.begin(), vec.end(), start), start);
  Block& blk = it->second;
  uint32_t payload =
      carve_chunk(blk, start, kBlockBytes - kChunkHeaderBytes, need, size);
  return {AllocStatus::Ok, payload, blk.info()};
}

AllocResult AsmsAllocator::alloc_large(uint64_t size, const Label& label) {
  if (size > UINT64_MAX - kChunkHeaderBytes - kPageSize)
    return {AllocStatus::OutOfAsms};
  uint64_t total = size + kChunkHeaderBytes;
  uint64_t pages64 = (total + kPageSize - 1) / kPageSize;
  if (pages64 > kAsmsPages) return {AllocStatus::OutOfAsms};
  uint32_t pages = static_cast<uint32_t>(pages64);

  uint32_t start = 0;
  bool from_extent = false;
  // Reuse a freed extent when one is big enough (lowest address first,
  // carved from the bottom), otherwise carve below the backward cursor.
  for (auto it = free_large_.begin(); it != free_large_.end(); ++it) {
    if (it->second >= pages) {
      start = it->first;
      uint32_t rem_pages = it->second - pages;
      free_large_.erase(it);
      if (rem_pages > 0)
        free_large_.emplace(start + pages * kPageSize, rem_pages);
      from_extent = true;
      break;
    }
  }
  if (!from_extent) {
    uint64_t bytes = uint64_t{pages} * kPageSize;
    if (uint64_t{bwd_cursor_} - kAsmsBase < bytes ||
        bwd_cursor_ - bytes < fwd_cursor_)
      return {AllocStatus::OutOfAsms};
    start = static_cast<uint32_t>(bwd_cursor_ - bytes);
    bwd_cursor_ = start;
  }
  stats_.blocks_created += 1;
  store_.zero(start, uint64_t{pages} * kPageSize);

  Block b;
  b.start = start;
  b.pages = pages;
  b.kind = BlockKind::Large;
  b.label = label;
  uint32_t capacity = pages * kPageSize - kChunkHeaderBytes;
  b.used_chunks.emplace(start, capacity);
  write_chunk_header(start, capacity, true);
  auto [it, inserted] = blocks_.emplace(start, std::move(b));
  uint32_t payload = start + kChunkHeaderBytes;
  objects_.emplace(payload, ObjectEntry{start, size});
  return {AllocStatus::Ok, payload, it->second.info()};
}

AllocResult AsmsAllocator::allocate_zeroed(uint64_t count, uint64_t size,
                                           const Label& label) {
  if (count == 0 || size == 0) return {AllocStatus::ZeroSize};
  if (count > UINT64_MAX / size) return {AllocStatus::Overflow};
  uint64_t total = count * size;
  AllocResult r = allocate(total, label);
  if (r.status == AllocStatus::Ok) store_.zero(r.addr, total);
  return r;
}

AllocResult AsmsAllocator::map_region(uint64_t length, const Label& label,
                                      std::span<const uint8_t> fill) {
  if (length == 0) return {AllocStatus::ZeroSize};
  if (fill.size() > length) return {AllocStatus::Overflow};
  AllocResult r = alloc_large(length, label);
  if (r.status == AllocStatus::Ok && !fill.empty()) store_.write(r.addr, fill);
  return r;
}

void AsmsAllocator::release_chunk(Block& b, uint32_t header_addr) {
  uint32_t cap = b.used_chunks.at(header_addr);
  b.used_chunks.erase(header_addr);
  uint32_t cur_hdr = header_addr;
  uint32_t cur_cap = cap;
  // Coalesce with the previous free chunk when adjacent.
  auto next = b.free_chunks.upper_bound(cur_hdr);
  if (next != b.free_chunks.begin()) {
    auto prev = std::prev(next);
    if (prev->first + kChunkHeaderBytes + prev->second == cur_hdr) {
      cur_hdr = prev->first;
      cur_cap = prev->second + kChunkHeaderBytes + cur_cap;
      b.free_bytes -= prev->second;
      b.free_chunks.erase(prev);
    }
  }
  // Coalesce with the following free chunk when adjacent.
  next = b.free_chunks.upper_bound(cur_hdr);
  if (next != b.free_chunks.end() &&
      cur_hdr + kChunkHeaderBytes + cur_cap == next->first) {
    cur_cap += kChunkHeaderBytes + next->second;
    b.free_bytes -= next->second;
    b.free_chunks.erase(next);
  }
  b.free_chunks.emplace(cur_hdr, cur_cap);
  b.free_bytes += cur_cap;
  write_chunk_header(cur_hdr, cur_cap, false);
}

FreeResult AsmsAllocator::free_object(uint32_t addr) {
  auto obj = objects_.find(addr);
  if (obj == objects_.end()) return {AllocStatus::UnknownAddress};
  Block* b = find_block(obj->second.block_start);
  uint32_t header_addr = addr - kChunkHeaderBytes;
  objects_.erase(obj);

  if (b->kind == BlockKind::Large) {
    BlockInfo info = b->info();
    info.live_chunks = 0;
    uint32_t start = b->start;
    uint32_t pages = b->pages;
    blocks_.erase(start);
    // Merge the extent with free neighbors.
    uint32_t ext_start = start;
    uint32_t ext_pages = pages;
    auto after = free_large_.upper_bound(ext_start);
    if (after != free_large_.begin()) {
      auto prev = std::prev(after);
      if (prev->first + prev->second * kPageSize == ext_start) {
        ext_start = prev->first;
        ext_pages += prev->second;
        free_large_.erase(prev);
      }
    }
    after = free_large_.upper_bound(ext_start);
    if (after != free_large_.end() &&
        ext_start + ext_pages * uint64_t{kPageSize} == after->first) {
      ext_pages += after->second;
      free_large_.erase(after);
    }
    free_large_.emplace(ext_start, ext_pages);
    stats_.large_unmapped += 1;
    return {AllocStatus::Ok, info};
  }

  release_chunk(*b, header_addr);
  if (b->used_chunks.empty()) {
    // Whole block free: park it on the label's recycle list.
    BlockInfo info = b->info();
    uint32_t start = b->start;
    Label label = b->label;
    auto& vec = label_blocks_[label];
    vec.erase(std::find(vec.begin(), vec.end(), start));
    blocks_.erase(start);
    auto& rec = recycle_[label];
    rec.insert(std::upper_bound(rec.begin(), rec.end(), start), start);
    stats_.blocks_recycled += 1;
    return {AllocStatus::Ok, info};
  }
  return {AllocStatus::Ok, std::nullopt};
}

ReallocResult AsmsAllocator::reallocate(uint32_t addr, uint64_t new_size) {
  auto obj = objects_.find(addr);
  if (obj == objects_.end()) return {AllocStatus::UnknownAddress};
  if (new_size == 0) return {AllocStatus::ZeroSize};
  Block* b = find_block(obj->second.block_start);
  uint32_t header_addr = addr - kChunkHeaderBytes;
  uint32_t capacity = b->used_chunks.at(header_addr);
  uint64_t old_size = obj->second.size;

  if (b->kind == BlockKind::Normal && new_size <= kLargeThreshold &&
      round_chunk(new_size) == capacity) {
    obj->second.size = new_size;  // fits the existing chunk exactly
    return {AllocStatus::Ok, addr};
  }

  AllocResult moved = allocate(new_size, b->label);
  if (moved.status != AllocStatus::Ok) return {moved.status};
  std::vector<uint8_t> keep =
      store_.read(addr, static_cast<size_t>(std::min(old_size, new_size)));
  store_.write(moved.addr, keep);
  FreeResult freed = free_object(addr);
  return {AllocStatus::Ok, moved.addr, moved.new_block, freed.freed_block};
}

std::optional<ObjectInfo> AsmsAllocator::lookup_object(uint32_t addr) const {
  auto it = objects_.find(addr);
  if (it == objects_.end()) return std::nullopt;
  return ObjectInfo{blocks_.at(it->second.block_start).label,
                    it->second.size};
}

std::vector<BlockInfo> AsmsAllocator::live_blocks() const {
  std::vector<BlockInfo> out;
  out.reserve(blocks_.size());
  for (const auto& [start, b] : blocks_) out.push_back(b.info());
  return out;
}

std::vector<std::pair<uint32_t, ObjectInfo>> AsmsAllocator::live_objects()
    const {
  std::vector<std::pair<uint32_t, ObjectInfo>> out;
  out.reserve(objects_.size());
  for (const auto& [addr, entry] : objects_) {
    out.emplace_back(addr, ObjectInfo{blocks_.at(entry.block_start).label,
                                      entry.size});
  }
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  return out;
}

uint64_t AsmsAllocator::total_free_bytes() const {
  uint64_t sum = 0;
  for (const auto& [start, b] : blocks_) sum += b.free_bytes;
  return sum;
}

void AsmsAllocator::dump_layout(std::ostream& out,
                                const CategoryNamer& namer) const {
  for (const auto& [start, b] : blocks_) {
    out << (b.kind == BlockKind::Normal ? "normal" : "large") << " 0x"
        << std::hex << b.start << std::dec << ' ' << b.pages << ' '
        << format_label(b.label, namer) << ' ' << b.live_chunks() << '\n';
  }
}

std::string AsmsAllocator::dump_layout(const CategoryNamer& namer) const {
  std::ostringstream out;
  dump_layout(out, namer);
  return out.str();
}

}  // namespace arbiter
