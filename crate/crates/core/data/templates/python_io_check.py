__result = {{entry}}({{input}})
__expected = {{expected}}
assert __result == __expected, "expected %r, got %r" % (__expected, __result)
