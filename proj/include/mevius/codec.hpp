#pragma once

// MIT-mode servo frame codec.
//
// Command payload, 8 bytes, fields packed MSB first:
//   p_des[16] v_des[12] kp[12] kd[12] tau_ff[12]
//   byte 0..1  p_des
//   byte 2     v_des[11:4]
//   byte 3     v_des[3:0] << 4 | kp[11:8]
//   byte 4     kp[7:0]
//   byte 5     kd[11:4]
//   byte 6     kd[3:0] << 4 | tau_ff[11:8]
//   byte 7     tau_ff[7:0]
//
// Feedback payload, 6 bytes:
//   byte 0     motor id
//   byte 1..2  position[16]
//   byte 3     velocity[11:4]
//   byte 4     velocity[3:0] << 4 | torque[11:8]
//   byte 5     torque[7:0]
//
// Quantization: u = round((x - min) / (max - min) * (2^bits - 1)), ties away
// from zero, after clamping x into [min, max]. Dequantization:
// x = min + u / (2^bits - 1) * (max - min).

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <span>
#include <string>

#include "mevius/common.hpp"

namespace mevius {

struct FieldRange {
  double min = 0.0;
  double max = 1.0;
  int bits = 12;

  std::uint32_t max_code() const { return (1u << bits) - 1u; }
  double lsb() const { return (max - min) / static_cast<double>(max_code()); }
};

struct FrameCodecSpec {
  FieldRange position{-12.5, 12.5, 16};
  FieldRange velocity{-50.0, 50.0, 12};
  FieldRange kp{0.0, 500.0, 12};
  FieldRange kd{0.0, 5.0, 12};
  FieldRange torque{-25.0, 25.0, 12};
  int motor_count = 12;

  void validate() const {
    auto check = [](const FieldRange& f, int bits, const char* name) {
      if (f.bits != bits) throw ConfigError(std::string("codec.") + name + ": bit width must be " + std::to_string(bits));
      if (!(f.min < f.max)) throw ConfigError(std::string("codec.") + name + ": min must be below max");
    };
    // Bit widths are fixed by the 8-byte layout (16+12+12+12+12 = 64).
    check(position, 16, "position");
    check(velocity, 12, "velocity");
    check(kp, 12, "kp");
    check(kd, 12, "kd");
    check(torque, 12, "torque");
    if (motor_count < 1 || motor_count > 255) throw ConfigError("codec.motor_count: must be in [1, 255]");
  }
};

struct MotorCommand {
  double p_des = 0.0;
  double v_des = 0.0;
  double kp = 0.0;
  double kd = 0.0;
  double tau_ff = 0.0;

  bool operator==(const MotorCommand&) const = default;
};

struct MotorFeedback {
  int motor_id = 0;
  double position = 0.0;
  double velocity = 0.0;
  double torque = 0.0;
};

using CommandPayload = std::array<std::uint8_t, 8>;
using FeedbackPayload = std::array<std::uint8_t, 6>;

struct Quantized {
  std::uint32_t code = 0;
  bool clamped = false;
};

inline Quantized quantize(double x, const FieldRange& f) {
  Quantized q;
  if (std::isnan(x)) {
    x = f.min;
    q.clamped = true;
  }
  if (x < f.min) {
    x = f.min;
    q.clamped = true;
  } else if (x > f.max) {
    x = f.max;
    q.clamped = true;
  }
  // std::round rounds halfway cases away from zero.
  const double u = std::round((x - f.min) / (f.max - f.min) * static_cast<double>(f.max_code()));
  q.code = static_cast<std::uint32_t>(clamp(u, 0.0, static_cast<double>(f.max_code())));
  return q;
}

inline double dequantize(std::uint32_t code, const FieldRange& f) {
  return f.min + static_cast<double>(code) / static_cast<double>(f.max_code()) * (f.max - f.min);
}

struct EncodedCommand {
  CommandPayload payload{};
  bool clamped = false;
};

inline EncodedCommand encode_command(const FrameCodecSpec& spec, const MotorCommand& cmd) {
  const Quantized p = quantize(cmd.p_des, spec.position);
  const Quantized v = quantize(cmd.v_des, spec.velocity);
  const Quantized kp = quantize(cmd.kp, spec.kp);
  const Quantized kd = quantize(cmd.kd, spec.kd);
  const Quantized t = quantize(cmd.tau_ff, spec.torque);
  EncodedCommand out;
  auto& b = out.payload;
  b[0] = static_cast<std::uint8_t>(p.code >> 8);
  b[1] = static_cast<std::uint8_t>(p.code & 0xFF);
  b[2] = static_cast<std::uint8_t>(v.code >> 4);
  b[3] = static_cast<std::uint8_t>(((v.code & 0xF) << 4) | (kp.code >> 8));
  b[4] = static_cast<std::uint8_t>(kp.code & 0xFF);
  b[5] = static_cast<std::uint8_t>(kd.code >> 4);
  b[6] = static_cast<std::uint8_t>(((kd.code & 0xF) << 4) | (t.code >> 8));
  b[7] = static_cast<std::uint8_t>(t.code & 0xFF);
  out.clamped = p.clamped || v.clamped || kp.clamped || kd.clamped || t.clamped;
  return out;
}

/// Motor-side parse of a command payload.
inline MotorCommand decode_command(const FrameCodecSpec& spec, std::span<const std::uint8_t> b) {
  if (b.size() != 8) throw FormatError("command payload must be 8 bytes, got " + std::to_string(b.size()));
  const std::uint32_t p = (std::uint32_t{b[0]} << 8) | b[1];
  const std::uint32_t v = (std::uint32_t{b[2]} << 4) | (b[3] >> 4);
  const std::uint32_t kp = ((std::uint32_t{b[3]} & 0xF) << 8) | b[4];
  const std::uint32_t kd = (std::uint32_t{b[5]} << 4) | (b[6] >> 4);
  const std::uint32_t t = ((std::uint32_t{b[6]} & 0xF) << 8) | b[7];
  return MotorCommand{dequantize(p, spec.position), dequantize(v, spec.velocity), dequantize(kp, spec.kp),
                      dequantize(kd, spec.kd), dequantize(t, spec.torque)};
}

/// Motor-side reply encoding.
inline FeedbackPayload encode_feedback(const FrameCodecSpec& spec, const MotorFeedback& fb) {
  const std::uint32_t p = quantize(fb.position, spec.position).code;
  const std::uint32_t v = quantize(fb.velocity, spec.velocity).code;
  const std::uint32_t t = quantize(fb.torque, spec.torque).code;
  FeedbackPayload b{};
  b[0] = static_cast<std::uint8_t>(fb.motor_id);
  b[1] = static_cast<std::uint8_t>(p >> 8);
  b[2] = static_cast<std::uint8_t>(p & 0xFF);
  b[3] = static_cast<std::uint8_t>(v >> 4);
  b[4] = static_cast<std::uint8_t>(((v & 0xF) << 4) | (t >> 8));
  b[5] = static_cast<std::uint8_t>(t & 0xFF);
  return b;
}

inline MotorFeedback decode_feedback(const FrameCodecSpec& spec, std::span<const std::uint8_t> b) {
  if (b.size() != 6) throw FormatError("feedback payload must be 6 bytes, got " + std::to_string(b.size()));
  const int id = b[0];
  if (id < 1 || id > spec.motor_count) throw FormatError("unknown motor id " + std::to_string(id));
  const std::uint32_t p = (std::uint32_t{b[1]} << 8) | b[2];
  const std::uint32_t v = (std::uint32_t{b[3]} << 4) | (b[4] >> 4);
  const std::uint32_t t = ((std::uint32_t{b[4]} & 0xF) << 8) | b[5];
  return MotorFeedback{id, dequantize(p, spec.position), dequantize(v, spec.velocity), dequantize(t, spec.torque)};
}

inline std::string to_hex(std::span<const std::uint8_t> bytes) {
  std::string s;
  s.reserve(bytes.size() * 2);
  char buf[3];
  for (auto byte : bytes) {
    std::snprintf(buf, sizeof(buf), "%02X", byte);
    s += buf;
  }
  return s;
}

}  // namespace mevius
