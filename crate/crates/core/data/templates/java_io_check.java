        Object result = {{entry}}({{input}});
        Object expected = {{expected}};
        if (!java.util.Objects.deepEquals(result, expected)) {
            System.err.println("expected " + expected + ", got " + result);
            System.exit(1);
        }
