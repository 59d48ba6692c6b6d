#pragma once

#include <charconv>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>

#include "tdmoe/error.hpp"

namespace tdmoe::detail {

// Shortest representation that parses back to the same double.
inline void write_number(std::ostream& os, double v)
{
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    os.write(buf, res.ptr - buf);
}

inline double parse_number(std::string_view tok, std::string_view context)
{
    double v = 0.0;
    const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    require(res.ec == std::errc() && res.ptr == tok.data() + tok.size(), ErrorCode::io,
            std::string(context) + ": malformed number '" + std::string(tok) + "'");
    return v;
}

inline double read_number(std::istream& is, std::string_view context)
{
    std::string tok;
    require(static_cast<bool>(is >> tok), ErrorCode::io, std::string(context) + ": unexpected end of input");
    return parse_number(tok, context);
}

inline void expect_token(std::istream& is, std::string_view expected, std::string_view context)
{
    std::string tok;
    require(static_cast<bool>(is >> tok) && tok == expected, ErrorCode::io,
            std::string(context) + ": expected '" + std::string(expected) + "', got '" + tok + "'");
}

inline std::size_t read_count(std::istream& is, std::string_view what, std::string_view context)
{
    long long v = -1;
    require(static_cast<bool>(is >> v) && v >= 0, ErrorCode::io,
            std::string(context) + ": bad " + std::string(what));
    return static_cast<std::size_t>(v);
}

} // namespace tdmoe::detail
