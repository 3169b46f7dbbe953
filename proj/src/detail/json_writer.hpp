#pragma once

#include <cinttypes>
#include <cstdint>
#include <cstdio>
#include <string>

namespace cellvit::detail {

// Minimal append-only JSON emitter. All exported JSON must be byte-stable,
// so floats are printed with a fixed decimal count instead of the
// shortest-roundtrip form a generic serializer would pick.
class JsonWriter {
public:
    std::string take() { return std::move(out_); }
    const std::string& str() const { return out_; }

    void raw(const char* s) { out_ += s; }
    void raw(const std::string& s) { out_ += s; }

    void string(const std::string& s) {
        out_ += '"';
        for (char c : s) {
            switch (c) {
                case '"': out_ += "\\\""; break;
                case '\\': out_ += "\\\\"; break;
                case '\n': out_ += "\\n"; break;
                case '\r': out_ += "\\r"; break;
                case '\t': out_ += "\\t"; break;
                default:
                    if (static_cast<unsigned char>(c) < 0x20) {
                        char buf[8];
                        std::snprintf(buf, sizeof buf, "\\u%04x", c);
                        out_ += buf;
                    } else {
                        out_ += c;
                    }
            }
        }
        out_ += '"';
    }

    void integer(std::int64_t v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%" PRId64, v);
        out_ += buf;
    }

    void fixed(double v, int decimals) {
        char buf[64];
        if (v == 0.0) v = 0.0; // normalize -0
        std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
        out_ += buf;
    }

    void key(const char* name) {
        string(name);
        out_ += ':';
    }

private:
    std::string out_;
};

} // namespace cellvit::detail
