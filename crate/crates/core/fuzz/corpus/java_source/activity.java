package com.example.app;

import android.os.Bundle;

/** Main screen. */
public class MainActivity extends Activity implements View.OnClickListener {
    private static final String TAG = "Main"; // tag

    @Override
    protected void onCreate(Bundle savedInstanceState) {
        super.onCreate(savedInstanceState);
        view.setBackgroundDrawable(getResources().getDrawable(R.drawable.bg));
    }

    public MainActivity() { this(0); }

    <T extends Comparable<T>> T max(List<? super T> xs, int... rest) throws IOException {
        return xs.stream().map(x -> x).reduce((a, b) -> a.compareTo(b) > 0 ? a : b).orElse(null);
    }
}
