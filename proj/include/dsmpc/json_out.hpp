#pragma once

#include <cmath>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

#include "dsmpc/linalg.hpp"

namespace dsmpc {

// All numeric output is serialised with 17 significant digits so that files
// round-trip doubles exactly and diffs across runs are meaningful.
inline std::string fmt_double(double v) {
    if (std::isnan(v)) return "null";
    if (std::isinf(v)) return v > 0 ? "\"inf\"" : "\"-inf\"";
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::string json_escape(const std::string& s) {
    std::string out;
    out.reserve(s.size() + 2);
    for (char c : s) {
        switch (c) {
            case '"': out += "\\\""; break;
            case '\\': out += "\\\\"; break;
            case '\n': out += "\\n"; break;
            case '\t': out += "\\t"; break;
            default: out += c;
        }
    }
    return out;
}

// Minimal appender for the JSON documents this project emits. Key order is
// whatever the caller uses, which keeps output canonical and hashable.
class JsonWriter {
  public:
    JsonWriter& begin_object() { return raw("{"); }
    JsonWriter& end_object() { trim_comma(); return raw("},"); }
    JsonWriter& begin_array() { return raw("["); }
    JsonWriter& end_array() { trim_comma(); return raw("],"); }

    JsonWriter& key(const std::string& k) { return raw("\"" + json_escape(k) + "\":"); }

    JsonWriter& value(double v) { return raw(fmt_double(v) + ","); }
    JsonWriter& value(int v) { return raw(std::to_string(v) + ","); }
    JsonWriter& value(uint64_t v) { return raw(std::to_string(v) + ","); }
    JsonWriter& value(bool v) { return raw(std::string(v ? "true" : "false") + ","); }
    JsonWriter& value(const std::string& s) { return raw("\"" + json_escape(s) + "\","); }
    JsonWriter& value(const char* s) { return value(std::string(s)); }

    template <typename T>
    JsonWriter& field(const std::string& k, const T& v) {
        key(k);
        return value(v);
    }

    JsonWriter& matrix(const Matrix& m) {
        begin_array();
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            begin_array();
            for (Eigen::Index j = 0; j < m.cols(); ++j) value(m(i, j));
            end_array();
        }
        return end_array();
    }

    JsonWriter& vector(const Vector& v) {
        begin_array();
        for (Eigen::Index i = 0; i < v.size(); ++i) value(v(i));
        return end_array();
    }

    JsonWriter& values(const std::vector<double>& v) {
        begin_array();
        for (double x : v) value(x);
        return end_array();
    }

    std::string str() const {
        std::string out = buf_;
        if (!out.empty() && out.back() == ',') out.pop_back();
        return out;
    }

  private:
    JsonWriter& raw(const std::string& s) {
        buf_ += s;
        return *this;
    }
    void trim_comma() {
        if (!buf_.empty() && buf_.back() == ',') buf_.pop_back();
    }
    std::string buf_;
};

}  // namespace dsmpc
