#pragma once

#include <cassert>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <memory>

#include "sopool/errors.hpp"

namespace sopool {

/// Per-slot bookkeeping word. The most significant bit marks the slot free;
/// while a free slot sits on the free-list, the low 31 bits hold the index
/// of the next free slot (or kFreeListEnd). For assigned slots the low bits
/// are dead and must never be read.
struct StatusWord {
  static constexpr std::uint32_t kFreeFlag = 0x8000'0000u;

  std::uint32_t raw = 0;

  bool is_free() const { return (raw & kFreeFlag) != 0; }
  std::uint32_t next_free() const { return raw & ~kFreeFlag; }

  static StatusWord assigned() { return StatusWord{0}; }
  static StatusWord free_linking_to(std::uint32_t next) {
    return StatusWord{kFreeFlag | next};
  }

  friend bool operator==(const StatusWord&, const StatusWord&) = default;
};

/// End-of-free-list sentinel: the largest 31-bit value. The capacity bound
/// below keeps every real slot index strictly smaller.
inline constexpr std::uint32_t kFreeListEnd = 0x7FFF'FFFFu;

/// Upper bound on user slots per bin so that all indices of the
/// capacity + 4 slots and the sentinel fit in the 31-bit status field.
inline constexpr std::uint32_t kMaxBinCapacity = 0x7FFF'FFFAu;  // 2^31 - 6

/// One pre-reserved block of fixed-size slots with an embedded free-list and
/// an intrusive traversal structure over the assigned slots.
///
/// Layout: capacity + 4 slots. Slot 0 and slot capacity+3 are permanently
/// assigned pseudo slots, slot 1 and slot capacity+2 permanently free pseudo
/// slots; user payload lives in slots [2, capacity+1]. Each slot is an
/// overlay region of max(payload_size, 16) bytes followed by a 4-byte status
/// word. While a slot is free, the overlay holds a pair of 64-bit slot
/// indices (next assigned, previous assigned) that let traversal skip a
/// whole run of free slots in one hop; while it is assigned, the overlay
/// belongs to the caller.
///
/// allocate() and deallocate() restore the traversal links with at most two
/// conditional writes each, so both are O(1) with no scanning.
///
/// Externally synchronized: at most one mutating call at a time, and
/// read-only stepping must not overlap a mutation.
class Bin {
 public:
  static constexpr std::uint32_t kPseudoSlots = 4;
  static constexpr std::uint32_t kFirstUserSlot = 2;
  static constexpr std::uint32_t kLinkBytes = 8;
  static constexpr std::uint32_t kStatusBytes = 4;

  /// Bytes one slot occupies, padding included (4-byte packing keeps the
  /// status word naturally aligned without inflating the 20/28-byte
  /// footprints of the common payload sizes).
  static constexpr std::uint32_t footprint(std::uint32_t payload_size) {
    const std::uint32_t overlay =
        payload_size < 2 * kLinkBytes ? 2 * kLinkBytes : payload_size;
    return ((overlay + 3u) & ~3u) + kStatusBytes;
  }

  Bin(std::uint32_t capacity, std::uint32_t payload_size);

  Bin(const Bin&) = delete;
  Bin& operator=(const Bin&) = delete;

  std::uint32_t capacity() const { return capacity_; }
  std::uint32_t payload_size() const { return payload_size_; }
  std::uint32_t slot_count() const { return capacity_ + kPseudoSlots; }
  std::uint32_t stride() const { return stride_; }
  /// Padding bytes per slot beyond payload + status (reported, not hidden).
  std::uint32_t padding_bytes() const {
    return stride_ - payload_size_ - kStatusBytes;
  }
  std::size_t bytes_reserved() const {
    return static_cast<std::size_t>(stride_) * slot_count();
  }

  std::uint32_t leading_pseudo() const { return 0; }
  std::uint32_t trailing_pseudo() const { return capacity_ + 3; }
  bool is_user_slot(std::uint32_t index) const {
    return index >= kFirstUserSlot && index <= capacity_ + 1;
  }

  bool full() const { return free_head_ == kFreeListEnd; }
  bool empty() const { return live_count_ == 0; }
  std::uint32_t live_count() const { return live_count_; }
  std::uint32_t free_head() const { return free_head_; }

  /// Pops the free-list head and repairs the traversal links of the
  /// boundary free slots next to it. Requires a non-full bin.
  std::uint32_t allocate();

  /// Pushes the slot back onto the free-list (LIFO), makes its own links
  /// valid, then repairs the boundary free slots next to it.
  void deallocate(std::uint32_t index);

  /// Smallest assigned index greater than `index`; trailing_pseudo() means
  /// end of bin. `index` must be assigned (the leading pseudo counts).
  std::uint32_t next_assigned(std::uint32_t index) const {
    if (index >= trailing_pseudo())
      throw UsageError("next_assigned: stepping past the trailing pseudo slot");
    assert(!status(index).is_free());
    const std::uint32_t n = index + 1;
    if (!status(n).is_free()) return n;
    return static_cast<std::uint32_t>(link_next(n));  // one hop over the free run
  }

  /// Largest assigned index smaller than `index`; 0 means begin of bin.
  std::uint32_t prev_assigned(std::uint32_t index) const {
    if (index == 0 || index > trailing_pseudo())
      throw UsageError("prev_assigned: stepping before the leading pseudo slot");
    assert(!status(index).is_free());
    const std::uint32_t p = index - 1;
    if (!status(p).is_free()) return p;
    return static_cast<std::uint32_t>(link_prev(p));
  }

  void* payload(std::uint32_t index) {
    assert(is_user_slot(index));
    return slots_.get() + slot_base(index);
  }
  const void* payload(std::uint32_t index) const {
    assert(is_user_slot(index));
    return slots_.get() + slot_base(index);
  }

  // Read-only slot inspection for the validity scanner and tests.
  StatusWord status(std::uint32_t index) const {
    StatusWord w;
    std::memcpy(&w.raw, slots_.get() + status_offset(index), kStatusBytes);
    return w;
  }
  std::uint64_t link_next(std::uint32_t index) const {
    std::uint64_t v;
    std::memcpy(&v, slots_.get() + slot_base(index), kLinkBytes);
    return v;
  }
  std::uint64_t link_prev(std::uint32_t index) const {
    std::uint64_t v;
    std::memcpy(&v, slots_.get() + slot_base(index) + kLinkBytes, kLinkBytes);
    return v;
  }

  /// Slot-field accesses performed by the most recent allocate()/deallocate().
  std::uint32_t last_op_writes() const { return op_writes_; }
  std::uint32_t last_op_reads() const { return op_reads_; }

  /// Fault injection for the fuzzer's mutation tests: each flag enables one
  /// of the four boundary link repairs. All true in normal operation.
  struct RepairToggles {
    bool alloc_next = true;
    bool alloc_prev = true;
    bool dealloc_next = true;
    bool dealloc_prev = true;
  };
  static inline RepairToggles repair_toggles{};

  // Deliberate corruption hooks for scanner tests.
  void corrupt_link_next(std::uint32_t index, std::uint64_t value) {
    store_link_next(index, value);
  }
  void corrupt_link_prev(std::uint32_t index, std::uint64_t value) {
    store_link_prev(index, value);
  }

 private:
  std::size_t slot_base(std::uint32_t index) const {
    return static_cast<std::size_t>(index) * stride_;
  }
  std::size_t status_offset(std::uint32_t index) const {
    return slot_base(index) + stride_ - kStatusBytes;
  }

  void store_status(std::uint32_t index, StatusWord w) {
    std::memcpy(slots_.get() + status_offset(index), &w.raw, kStatusBytes);
  }
  void store_link_next(std::uint32_t index, std::uint64_t v) {
    std::memcpy(slots_.get() + slot_base(index), &v, kLinkBytes);
  }
  void store_link_prev(std::uint32_t index, std::uint64_t v) {
    std::memcpy(slots_.get() + slot_base(index) + kLinkBytes, &v, kLinkBytes);
  }

  // Counted accessors used only on the allocate/deallocate paths.
  StatusWord counted_status(std::uint32_t index) {
    ++op_reads_;
    return status(index);
  }
  void counted_store_status(std::uint32_t index, StatusWord w) {
    ++op_writes_;
    store_status(index, w);
  }
  std::uint64_t counted_link_next(std::uint32_t index) {
    ++op_reads_;
    return link_next(index);
  }
  std::uint64_t counted_link_prev(std::uint32_t index) {
    ++op_reads_;
    return link_prev(index);
  }
  void counted_store_link_next(std::uint32_t index, std::uint64_t v) {
    ++op_writes_;
    store_link_next(index, v);
  }
  void counted_store_link_prev(std::uint32_t index, std::uint64_t v) {
    ++op_writes_;
    store_link_prev(index, v);
  }

  std::unique_ptr<std::byte[]> slots_;
  std::uint32_t capacity_ = 0;
  std::uint32_t payload_size_ = 0;
  std::uint32_t stride_ = 0;
  std::uint32_t free_head_ = kFreeListEnd;
  std::uint32_t live_count_ = 0;
  std::uint32_t op_reads_ = 0;
  std::uint32_t op_writes_ = 0;
};

inline std::uint32_t Bin::allocate() {
  if (full()) throw UsageError("allocate: bin is full");
  op_reads_ = 0;
  op_writes_ = 0;

  const std::uint32_t i = free_head_;
  free_head_ = counted_status(i).next_free();
  counted_store_status(i, StatusWord::assigned());

  // The popped slot's links are read before the caller can touch the
  // payload overlay; they point at the nearest assigned slots and are used
  // to reach the boundary free slots whose links must now name slot i.
  const bool below_free = counted_status(i - 1).is_free();
  const bool above_free = counted_status(i + 1).is_free();
  if (below_free && repair_toggles.alloc_next) {
    const auto prev = static_cast<std::uint32_t>(counted_link_prev(i));
    counted_store_link_next(prev + 1, i);
  }
  if (above_free && repair_toggles.alloc_prev) {
    const auto next = static_cast<std::uint32_t>(counted_link_next(i));
    counted_store_link_prev(next - 1, i);
  }

  ++live_count_;
  return i;
}

inline void Bin::deallocate(std::uint32_t index) {
  if (!is_user_slot(index))
    throw UsageError("deallocate: index is a pseudo slot or out of range");
  op_reads_ = 0;
  op_writes_ = 0;
  if (counted_status(index).is_free())
    throw UsageError("deallocate: slot is already free (double free)");

  // LIFO push: the slot re-enters the free-list at the top so the next
  // allocation pops it back in reverse order of deallocation.
  counted_store_status(index, StatusWord::free_linking_to(free_head_));
  free_head_ = index;

  // Make the freed slot's own links valid first; the boundary repairs below
  // forward them.
  const bool above_free = counted_status(index + 1).is_free();
  const std::uint32_t next =
      above_free ? static_cast<std::uint32_t>(counted_link_next(index + 1))
                 : index + 1;
  counted_store_link_next(index, next);

  const bool below_free = counted_status(index - 1).is_free();
  const std::uint32_t prev =
      below_free ? static_cast<std::uint32_t>(counted_link_prev(index - 1))
                 : index - 1;
  counted_store_link_prev(index, prev);

  if (below_free && repair_toggles.dealloc_next)
    counted_store_link_next(prev + 1, next);
  if (above_free && repair_toggles.dealloc_prev)
    counted_store_link_prev(next - 1, prev);

  --live_count_;
}

}  // namespace sopool
