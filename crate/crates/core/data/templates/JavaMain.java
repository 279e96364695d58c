// One test for an external JDK. The unit's methods are pasted into Main
// and the check runs from an instance method, so static and instance
// methods are both callable by their bare names.
public class Main {
{{unit}}

    private void runCheck() throws Exception {
{{check}}
    }

    public static void main(String[] args) throws Exception {
        new Main().runCheck();
    }
}
